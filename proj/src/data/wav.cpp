#include "kwsf/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kwsf/error.hpp"

namespace kwsf {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::string tag() {
    need(4);
    std::string s(reinterpret_cast<const char*>(&bytes_[pos_]), 4);
    pos_ += 4;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (!has(n)) fail(ErrorCode::kFormat, "wav: truncated header");
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

double read_sample(const unsigned char* p, std::uint16_t format, std::uint16_t bits) {
  if (format == kFormatFloat) {
    float f;
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
  }
  switch (bits) {
    case 8:  // unsigned, offset binary
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16: {
      const auto v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
      return v / 32768.0;
    }
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    case 32: {
      const auto v = static_cast<std::int32_t>(
          static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
          (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24));
      return v / 2147483648.0;
    }
  }
  return 0.0;
}

}  // namespace

AudioClip decode_wav(const std::vector<unsigned char>& bytes, int target_rate) {
  ByteReader r(bytes);
  if (r.tag() != "RIFF") fail(ErrorCode::kFormat, "wav: missing RIFF tag");
  r.u32();
  if (r.tag() != "WAVE") fail(ErrorCode::kFormat, "wav: missing WAVE tag");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  std::size_t data_begin = 0, data_size = 0;
  bool have_data = false;

  while (r.has(8) && !(have_fmt && have_data)) {
    const std::string id = r.tag();
    const std::uint32_t size = r.u32();
    const std::size_t body = r.pos();
    if (id == "fmt ") {
      if (size < 16) fail(ErrorCode::kFormat, "wav: fmt chunk too small");
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      block_align = r.u16();
      bits = r.u16();
      if (format == kFormatExtensible) {
        if (size < 26) fail(ErrorCode::kFormat, "wav: extensible fmt chunk too small");
        r.u16();  // cb size
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(ErrorCode::kFormat, "wav: data chunk before fmt chunk");
      data_begin = body;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
      have_data = true;
    }
    r.seek(body + size + (size & 1u));
  }
  if (!have_fmt) fail(ErrorCode::kFormat, "wav: no fmt chunk");
  if (!have_data) fail(ErrorCode::kFormat, "wav: no data chunk");
  if (channels == 0 || rate == 0) fail(ErrorCode::kFormat, "wav: zero channels or sample rate");

  const bool int_ok = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool float_ok = format == kFormatFloat && bits == 32;
  if (!int_ok && !float_ok) {
    fail(ErrorCode::kUnsupported, "wav: unsupported encoding (format " + std::to_string(format) +
                                      ", " + std::to_string(bits) + " bits)");
  }
  const std::size_t sample_bytes = bits / 8u;
  if (block_align < sample_bytes * channels) fail(ErrorCode::kFormat, "wav: inconsistent block align");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  const std::size_t frames = data_size / block_align;
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const double v = read_sample(&bytes[data_begin + i * block_align], format, bits);
    if (!std::isfinite(v)) fail(ErrorCode::kFormat, "wav: non-finite sample");
    clip.samples[i] = std::clamp(v, -1.0, 1.0);
  }
  if (target_rate > 0 && clip.sample_rate != target_rate) clip = resample_linear(clip, target_rate);
  return clip;
}

AudioClip load_wav(const std::filesystem::path& path, int target_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    AudioClip clip = decode_wav(bytes, target_rate);
    clip.source_path = path.generic_string();
    return clip;
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_wav16(const AudioClip& clip) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  };
  auto put16 = [&](std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>(v >> 8));
  };
  auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
  const auto rate = static_cast<std::uint32_t>(clip.sample_rate);
  tag("RIFF");
  put32(36 + 2 * n);
  tag("WAVE");
  tag("fmt ");
  put32(16);
  put16(kFormatPcm);
  put16(1);
  put32(rate);
  put32(rate * 2);
  put16(2);
  put16(16);
  tag("data");
  put32(2 * n);
  for (double s : clip.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const long q = std::clamp(std::lround(clamped * 32768.0), -32768L, 32767L);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav16(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace kwsf
