//! WAV-to-codec-and-back transcoding behind a subset of the ffmpeg command
//! line, so tooling written against `ffmpeg` flags can drive this binary as a
//! drop-in stand-in:
//!
//! ```text
//! codecbox -hide_banner -loglevel error -y -i in.wav -c:a libmp3lame -b:a 64k out.mp3
//! codecbox -hide_banner -loglevel error -y -i in.wav -c:a libopus -b:a 16k out.ogg
//! codecbox -hide_banner -loglevel error -y -i in.wav -c:a libvorbis -q:a 2 out.ogg
//! codecbox -hide_banner -loglevel error -y -i in.mp3 -ar 22050 out.wav
//! ```
//!
//! Encoding targets MP3 (LAME), Opus-in-OGG, or Vorbis-in-OGG; decoding
//! reads any of the three back to 16-bit WAV, resampling to `-ar` when given.
//! Opus runs at 48 kHz internally, so signals are resampled on the way in and
//! out; MP3 and Vorbis code the native rate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::num::{NonZeroU32, NonZeroU8};
use std::path::{Path, PathBuf};

use tidemark::audio::Waveform;
use tidemark::dsp::ResamplePlan;

const OPUS_RATE: u32 = 48000;
/// 20 ms at 48 kHz.
const OPUS_FRAME: usize = 960;
const OGG_SERIAL: u32 = 0x7473_6d6b;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("audio error: {0}")]
    Audio(#[from] tidemark::Error),
    #[error("mp3 encoder: {0}")]
    Mp3Encode(String),
    #[error("mp3 decoder: {0}")]
    Mp3Decode(String),
    #[error("opus: {0}")]
    Opus(#[from] opus::Error),
    #[error("ogg: {0}")]
    Ogg(String),
    #[error("vorbis: {0}")]
    Vorbis(String),
    #[error("malformed stream: {0}")]
    Malformed(String),
}

type Result<T> = std::result::Result<T, CodecError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CodecError + '_ {
    move |source| CodecError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Encoder selection, named after the ffmpeg `-c:a` values it accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AudioCodec {
    Mp3Lame,
    Opus,
    Vorbis,
}

impl AudioCodec {
    fn from_flag(name: &str) -> Result<Self> {
        match name {
            "libmp3lame" | "mp3" => Ok(AudioCodec::Mp3Lame),
            "libopus" | "opus" => Ok(AudioCodec::Opus),
            "libvorbis" | "vorbis" => Ok(AudioCodec::Vorbis),
            other => Err(CodecError::Usage(format!("unknown codec '{other}'"))),
        }
    }
}

/// Parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Cli {
    pub input: PathBuf,
    pub output: PathBuf,
    pub codec: Option<String>,
    pub bitrate_bps: Option<u32>,
    pub quality: Option<f64>,
    pub sample_rate: Option<u32>,
}

impl Cli {
    /// Parse the supported ffmpeg-style flag subset. `-hide_banner`,
    /// `-loglevel <x>`, and `-y` are accepted and ignored; the single
    /// positional argument is the output path.
    pub fn parse<I: IntoIterator<Item = String>>(args: I) -> Result<Cli> {
        let mut args = args.into_iter();
        let mut input = None;
        let mut output = None;
        let mut codec = None;
        let mut bitrate_bps = None;
        let mut quality = None;
        let mut sample_rate = None;
        let need = |args: &mut dyn Iterator<Item = String>, flag: &str| {
            args.next()
                .ok_or_else(|| CodecError::Usage(format!("{flag} needs a value")))
        };
        while let Some(arg) = args.next() {
            match arg.as_str() {
                "-hide_banner" | "-y" | "-vn" | "-nostdin" => {}
                "-loglevel" => {
                    need(&mut args, "-loglevel")?;
                }
                "-i" => input = Some(PathBuf::from(need(&mut args, "-i")?)),
                "-c:a" | "-acodec" => codec = Some(need(&mut args, "-c:a")?),
                "-b:a" => {
                    let raw = need(&mut args, "-b:a")?;
                    bitrate_bps = Some(parse_bitrate(&raw)?);
                }
                "-q:a" => {
                    let raw = need(&mut args, "-q:a")?;
                    quality = Some(raw.parse::<f64>().map_err(|_| {
                        CodecError::Usage(format!("bad -q:a value '{raw}'"))
                    })?);
                }
                "-ar" => {
                    let raw = need(&mut args, "-ar")?;
                    sample_rate = Some(raw.parse::<u32>().map_err(|_| {
                        CodecError::Usage(format!("bad -ar value '{raw}'"))
                    })?);
                }
                "-ac" => {
                    let raw = need(&mut args, "-ac")?;
                    if raw != "1" {
                        return Err(CodecError::Usage("only mono (-ac 1) is supported".into()));
                    }
                }
                flag if flag.starts_with('-') => {
                    return Err(CodecError::Usage(format!("unsupported flag '{flag}'")));
                }
                _ => {
                    if output.replace(PathBuf::from(&arg)).is_some() {
                        return Err(CodecError::Usage(format!(
                            "multiple output paths ('{arg}' after another)"
                        )));
                    }
                }
            }
        }
        Ok(Cli {
            input: input.ok_or_else(|| CodecError::Usage("missing -i <input>".into()))?,
            output: output.ok_or_else(|| CodecError::Usage("missing output path".into()))?,
            codec,
            bitrate_bps,
            quality,
            sample_rate,
        })
    }
}

/// Accepts `64k`, `64000`, or `0.5M` style rates.
fn parse_bitrate(raw: &str) -> Result<u32> {
    let lower = raw.to_ascii_lowercase();
    let (digits, mult) = if let Some(d) = lower.strip_suffix('k') {
        (d, 1_000.0)
    } else if let Some(d) = lower.strip_suffix('m') {
        (d, 1_000_000.0)
    } else {
        (lower.as_str(), 1.0)
    };
    let value: f64 = digits
        .parse()
        .map_err(|_| CodecError::Usage(format!("bad bitrate '{raw}'")))?;
    Ok((value * mult).round() as u32)
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Execute one parsed command: WAV input encodes, coded input decodes.
pub fn run(cli: &Cli) -> Result<()> {
    match extension(&cli.output).as_str() {
        "wav" => decode_to_wav(&cli.input, &cli.output, cli.sample_rate),
        "mp3" => {
            let codec = match &cli.codec {
                Some(name) => AudioCodec::from_flag(name)?,
                None => AudioCodec::Mp3Lame,
            };
            if codec != AudioCodec::Mp3Lame {
                return Err(CodecError::Usage(
                    "an .mp3 output requires -c:a libmp3lame".into(),
                ));
            }
            encode_mp3(&cli.input, &cli.output, cli.bitrate_bps.unwrap_or(64_000))
        }
        "ogg" | "opus" | "oga" => {
            let codec = match &cli.codec {
                Some(name) => AudioCodec::from_flag(name)?,
                None => {
                    return Err(CodecError::Usage(
                        "an .ogg output needs -c:a libopus or -c:a libvorbis".into(),
                    ))
                }
            };
            match codec {
                AudioCodec::Opus => {
                    encode_opus(&cli.input, &cli.output, cli.bitrate_bps.unwrap_or(64_000))
                }
                AudioCodec::Vorbis => {
                    encode_vorbis(&cli.input, &cli.output, cli.quality.unwrap_or(3.0))
                }
                AudioCodec::Mp3Lame => Err(CodecError::Usage(
                    "mp3 streams cannot be muxed into .ogg here".into(),
                )),
            }
        }
        other => Err(CodecError::Usage(format!(
            "unsupported output extension '.{other}'"
        ))),
    }
}

fn read_input_wav(path: &Path) -> Result<Waveform> {
    Ok(Waveform::read_wav(path)?)
}

fn resample_to(w: &Waveform, rate: u32) -> Waveform {
    if w.sample_rate == rate {
        w.clone()
    } else {
        let plan = ResamplePlan::new(w.sample_rate, rate, 16, 0.99);
        Waveform::new(plan.apply(&w.samples), rate)
    }
}

// ---- MP3 ---------------------------------------------------------------

fn lame_bitrate(bps: u32) -> Result<mp3lame_encoder::Bitrate> {
    use mp3lame_encoder::Bitrate::*;
    let kbps = bps / 1000;
    let table = [
        (8, Kbps8),
        (16, Kbps16),
        (24, Kbps24),
        (32, Kbps32),
        (40, Kbps40),
        (48, Kbps48),
        (64, Kbps64),
        (80, Kbps80),
        (96, Kbps96),
        (112, Kbps112),
        (128, Kbps128),
        (160, Kbps160),
        (192, Kbps192),
        (224, Kbps224),
        (256, Kbps256),
        (320, Kbps320),
    ];
    table
        .iter()
        .find(|(k, _)| *k == kbps)
        .map(|(_, v)| *v)
        .ok_or_else(|| CodecError::Usage(format!("unsupported mp3 bitrate {kbps} kbps")))
}

fn encode_mp3(input: &Path, output: &Path, bitrate_bps: u32) -> Result<()> {
    use mp3lame_encoder::{Builder, FlushNoGap, MonoPcm};

    let wav = read_input_wav(input)?;
    let pcm: Vec<i16> = wav
        .samples
        .iter()
        .map(|&v| (v.clamp(-1.0, 1.0) * 32767.0).round() as i16)
        .collect();

    let mut builder = Builder::new().ok_or_else(|| CodecError::Mp3Encode("init failed".into()))?;
    builder
        .set_num_channels(1)
        .map_err(|e| CodecError::Mp3Encode(e.to_string()))?;
    builder
        .set_sample_rate(wav.sample_rate)
        .map_err(|e| CodecError::Mp3Encode(e.to_string()))?;
    builder
        .set_brate(lame_bitrate(bitrate_bps)?)
        .map_err(|e| CodecError::Mp3Encode(e.to_string()))?;
    builder
        .set_quality(mp3lame_encoder::Quality::Best)
        .map_err(|e| CodecError::Mp3Encode(e.to_string()))?;
    let mut encoder = builder
        .build()
        .map_err(|e| CodecError::Mp3Encode(e.to_string()))?;

    let mut out = Vec::new();
    out.reserve(mp3lame_encoder::max_required_buffer_size(pcm.len()));
    let written = encoder
        .encode(MonoPcm(&pcm), out.spare_capacity_mut())
        .map_err(|e| CodecError::Mp3Encode(e.to_string()))?;
    // The encoder reports how much of the reserved tail it filled.
    unsafe { out.set_len(out.len() + written) };
    out.reserve(7200);
    let written = encoder
        .flush::<FlushNoGap>(out.spare_capacity_mut())
        .map_err(|e| CodecError::Mp3Encode(e.to_string()))?;
    unsafe { out.set_len(out.len() + written) };

    let mut file = BufWriter::new(File::create(output).map_err(io_err(output))?);
    file.write_all(&out).map_err(io_err(output))?;
    file.flush().map_err(io_err(output))?;
    Ok(())
}

fn decode_mp3(path: &Path) -> Result<Waveform> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = minimp3::Decoder::new(BufReader::new(file));
    let mut samples = Vec::new();
    let mut rate = 0u32;
    loop {
        match decoder.next_frame() {
            Ok(frame) => {
                if rate == 0 {
                    rate = frame.sample_rate as u32;
                } else if rate != frame.sample_rate as u32 {
                    return Err(CodecError::Malformed(
                        "mp3 sample rate changes mid-stream".into(),
                    ));
                }
                let ch = frame.channels.max(1);
                samples.extend(
                    frame
                        .data
                        .chunks(ch)
                        .map(|f| f.iter().map(|&s| s as f64).sum::<f64>() / (ch as f64 * 32768.0)),
                );
            }
            Err(minimp3::Error::Eof) => break,
            Err(e) => return Err(CodecError::Mp3Decode(e.to_string())),
        }
    }
    if samples.is_empty() || rate == 0 {
        return Err(CodecError::Malformed("mp3 stream held no audio".into()));
    }
    Ok(Waveform::new(samples, rate))
}

// ---- Opus ---------------------------------------------------------------

fn ogg_err(e: impl std::fmt::Display) -> CodecError {
    CodecError::Ogg(e.to_string())
}

fn encode_opus(input: &Path, output: &Path, bitrate_bps: u32) -> Result<()> {
    let wav = read_input_wav(input)?;
    let at48k = resample_to(&wav, OPUS_RATE);
    let mut pcm: Vec<f32> = at48k.samples.iter().map(|&v| v as f32).collect();
    let useful = pcm.len() as u64;
    // Whole frames only: pad the tail with silence.
    let rem = pcm.len() % OPUS_FRAME;
    if rem != 0 {
        pcm.resize(pcm.len() + OPUS_FRAME - rem, 0.0);
    }

    let mut encoder = opus::Encoder::new(OPUS_RATE, opus::Channels::Mono, opus::Application::Audio)?;
    encoder.set_bitrate(opus::Bitrate::Bits(bitrate_bps as i32))?;
    let pre_skip = encoder.get_lookahead()? as u16;

    let file = BufWriter::new(File::create(output).map_err(io_err(output))?);
    let mut writer = ogg::PacketWriter::new(file);
    writer
        .write_packet(
            opus_head(pre_skip, wav.sample_rate),
            OGG_SERIAL,
            ogg::PacketWriteEndInfo::EndPage,
            0,
        )
        .map_err(ogg_err)?;
    writer
        .write_packet(
            opus_tags(),
            OGG_SERIAL,
            ogg::PacketWriteEndInfo::EndPage,
            0,
        )
        .map_err(ogg_err)?;

    let n_frames = pcm.len() / OPUS_FRAME;
    for i in 0..n_frames {
        let frame = &pcm[i * OPUS_FRAME..(i + 1) * OPUS_FRAME];
        let data = encoder.encode_vec_float(frame, 4000)?;
        let last = i + 1 == n_frames;
        // Granule positions count 48 kHz samples including pre-skip; the
        // final one marks where the useful signal ends so the decoder can
        // drop the padding frame tail.
        let granule = if last {
            pre_skip as u64 + useful
        } else {
            ((i + 1) * OPUS_FRAME) as u64
        };
        let end = if last {
            ogg::PacketWriteEndInfo::EndStream
        } else {
            ogg::PacketWriteEndInfo::NormalPacket
        };
        writer.write_packet(data, OGG_SERIAL, end, granule).map_err(ogg_err)?;
    }
    writer.into_inner().flush().map_err(io_err(output))?;
    Ok(())
}

fn opus_head(pre_skip: u16, input_rate: u32) -> Vec<u8> {
    let mut head = Vec::with_capacity(19);
    head.extend_from_slice(b"OpusHead");
    head.push(1); // version
    head.push(1); // channel count
    head.extend_from_slice(&pre_skip.to_le_bytes());
    head.extend_from_slice(&input_rate.to_le_bytes());
    head.extend_from_slice(&0i16.to_le_bytes()); // output gain
    head.push(0); // mapping family: mono/stereo
    head
}

fn opus_tags() -> Vec<u8> {
    let vendor = b"codecbox";
    let mut tags = Vec::new();
    tags.extend_from_slice(b"OpusTags");
    tags.extend_from_slice(&(vendor.len() as u32).to_le_bytes());
    tags.extend_from_slice(vendor);
    tags.extend_from_slice(&0u32.to_le_bytes()); // no user comments
    tags
}

fn decode_opus(path: &Path) -> Result<Waveform> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = ogg::PacketReader::new(BufReader::new(file));
    let mut decoder = opus::Decoder::new(OPUS_RATE, opus::Channels::Mono)?;
    let mut samples: Vec<f64> = Vec::new();
    let mut pre_skip = 0u64;
    let mut final_granule = 0u64;
    let mut index = 0usize;
    let mut buf = vec![0f32; OPUS_FRAME * 4];
    while let Some(packet) = reader.read_packet().map_err(ogg_err)? {
        match index {
            0 => {
                if packet.data.len() < 19 || &packet.data[..8] != b"OpusHead" {
                    return Err(CodecError::Malformed("first ogg packet is not OpusHead".into()));
                }
                if packet.data[9] != 1 {
                    return Err(CodecError::Malformed("only mono opus is supported".into()));
                }
                pre_skip = u16::from_le_bytes([packet.data[10], packet.data[11]]) as u64;
            }
            1 => {
                // OpusTags: validated and ignored.
                if packet.data.len() < 8 || &packet.data[..8] != b"OpusTags" {
                    return Err(CodecError::Malformed("second ogg packet is not OpusTags".into()));
                }
            }
            _ => {
                let n = decoder.decode_float(&packet.data, &mut buf, false)?;
                samples.extend(buf[..n].iter().map(|&v| v as f64));
                final_granule = final_granule.max(packet.absgp_page());
            }
        }
        index += 1;
    }
    if samples.is_empty() {
        return Err(CodecError::Malformed("opus stream held no audio".into()));
    }
    let start = (pre_skip as usize).min(samples.len());
    let end = (final_granule as usize).clamp(start, samples.len());
    Ok(Waveform::new(samples[start..end].to_vec(), OPUS_RATE))
}

// ---- Vorbis -------------------------------------------------------------

fn vorbis_err(e: impl std::fmt::Display) -> CodecError {
    CodecError::Vorbis(e.to_string())
}

fn encode_vorbis(input: &Path, output: &Path, quality: f64) -> Result<()> {
    let wav = read_input_wav(input)?;
    let pcm: Vec<f32> = wav.samples.iter().map(|&v| v as f32).collect();
    // ffmpeg's -q:a scale for this encoder is 10x the library's own
    // [-0.1, 1.0] quality range.
    let target = (quality / 10.0).clamp(-0.1, 1.0) as f32;

    let mut file = BufWriter::new(File::create(output).map_err(io_err(output))?);
    let mut builder = vorbis_rs::VorbisEncoderBuilder::new(
        NonZeroU32::new(wav.sample_rate).expect("sample rate is nonzero"),
        NonZeroU8::new(1).unwrap(),
        &mut file,
    )
    .map_err(vorbis_err)?;
    builder.bitrate_management_strategy(vorbis_rs::VorbisBitrateManagementStrategy::QualityVbr {
        target_quality: target,
    });
    let mut encoder = builder.build().map_err(vorbis_err)?;
    encoder.encode_audio_block([&pcm]).map_err(vorbis_err)?;
    encoder.finish().map_err(vorbis_err)?;
    file.flush().map_err(io_err(output))?;
    Ok(())
}

fn decode_vorbis(path: &Path) -> Result<Waveform> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = vorbis_rs::VorbisDecoder::new(BufReader::new(file)).map_err(vorbis_err)?;
    let rate = decoder.sampling_frequency().get();
    let channels = decoder.channels().get() as usize;
    let mut samples: Vec<f64> = Vec::new();
    while let Some(block) = decoder.decode_audio_block().map_err(vorbis_err)? {
        let planes = block.samples();
        let n = planes[0].len();
        for i in 0..n {
            let mut acc = 0.0f64;
            for plane in planes {
                acc += plane[i] as f64;
            }
            samples.push(acc / channels as f64);
        }
    }
    if samples.is_empty() {
        return Err(CodecError::Malformed("vorbis stream held no audio".into()));
    }
    Ok(Waveform::new(samples, rate))
}

// ---- decode dispatch ------------------------------------------------------

/// Decode a coded file back to 16-bit WAV, resampling to `target_rate` when
/// given. The container is sniffed from the leading bytes, with the file
/// extension as fallback.
pub fn decode_to_wav(input: &Path, output: &Path, target_rate: Option<u32>) -> Result<()> {
    let mut head = [0u8; 36];
    let read = {
        let mut f = File::open(input).map_err(io_err(input))?;
        f.read(&mut head).map_err(io_err(input))?
    };
    let head = &head[..read];

    let decoded = if head.starts_with(b"OggS") {
        // Opus and Vorbis both live in OGG; the first packet's magic starts
        // at byte 28 of a fresh stream's first page.
        if head.len() >= 36 && &head[28..36] == b"OpusHead" {
            decode_opus(input)?
        } else {
            decode_vorbis(input)?
        }
    } else if extension(input) == "mp3" || head.starts_with(b"ID3") || looks_like_mp3(head) {
        decode_mp3(input)?
    } else {
        return Err(CodecError::Malformed(format!(
            "cannot identify coded input {}",
            input.display()
        )));
    };

    let out = match target_rate {
        Some(rate) => resample_to(&decoded, rate),
        None => decoded,
    };
    out.write_wav(output)?;
    Ok(())
}

fn looks_like_mp3(head: &[u8]) -> bool {
    head.len() >= 2 && head[0] == 0xFF && (head[1] & 0xE0) == 0xE0
}
