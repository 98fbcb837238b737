#include "dsu/feature_store.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "dsu/common.hpp"

namespace dsu {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Cursor {
 public:
  explicit Cursor(std::string_view data) : data_(data) {}

  std::uint64_t read_le(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += n;
    return v;
  }
  std::string_view read_bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CorruptionError("archive truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

float decode_f32(std::string_view bytes, std::size_t i) {
  std::uint32_t bits = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + k])) << (8 * k);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

LayerStack FeatureArchive::stack(const Utterance& utt) const {
  return LayerStack{utt.frames, num_layers, utt.num_frames, feature_dim};
}

LayerStack FeatureArchive::stack(std::size_t index) const { return stack(utterances.at(index)); }

void FeatureArchive::validate() const {
  if (num_layers == 0) throw ValidationError("archive needs at least one layer");
  if (feature_dim == 0) throw ValidationError("archive needs feature_dim >= 1");
  std::set<std::string_view> ids;
  for (const auto& utt : utterances) {
    if (utt.id.empty()) throw ValidationError("empty utterance id");
    if (utt.id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("utterance id too long: " + utt.id.substr(0, 32));
    }
    if (utt.id.find_first_of("\t\n\r") != std::string::npos) {
      throw ValidationError("utterance id contains tab or newline: " + utt.id);
    }
    if (!ids.insert(utt.id).second) throw ValidationError("duplicate utterance id: " + utt.id);
    if (utt.num_frames == 0) throw ValidationError("utterance has no frames: " + utt.id);
    const std::size_t expected = std::size_t{num_layers} * utt.num_frames * feature_dim;
    if (utt.frames.size() != expected) {
      throw ValidationError("frame tensor size mismatch for " + utt.id);
    }
    for (float v : utt.frames) {
      if (!std::isfinite(v)) throw ValidationError("non-finite feature value in " + utt.id);
    }
  }
}

std::uint64_t write_archive(const FeatureArchive& archive, std::ostream& out) {
  archive.validate();
  std::string head;
  head.append(kArchiveMagic, 4);
  put_u32(head, kArchiveVersion);
  put_u32(head, archive.num_layers);
  put_u32(head, archive.feature_dim);
  put_u32(head, static_cast<std::uint32_t>(archive.utterances.size()));

  std::uint64_t index_size = 0;
  for (const auto& utt : archive.utterances) index_size += 2 + utt.id.size() + 4 + 8;
  std::uint64_t offset = head.size() + index_size;
  for (const auto& utt : archive.utterances) {
    put_u16(head, static_cast<std::uint16_t>(utt.id.size()));
    head.append(utt.id);
    put_u32(head, utt.num_frames);
    put_u64(head, offset);
    offset += utt.frames.size() * 4;
  }
  out.write(head.data(), static_cast<std::streamsize>(head.size()));

  std::string payload;
  for (const auto& utt : archive.utterances) {
    payload.clear();
    payload.reserve(utt.frames.size() * 4);
    for (float v : utt.frames) put_u32(payload, std::bit_cast<std::uint32_t>(v));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw IoError("archive write failed");
  return offset;
}

FeatureArchive read_archive(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < 4 || data.compare(0, 4, kArchiveMagic, 4) != 0) {
    throw FormatError("bad archive magic");
  }
  Cursor cur(data);
  cur.read_bytes(4);
  const auto version = static_cast<std::uint32_t>(cur.read_le(4));
  if (version != kArchiveVersion) {
    throw UnsupportedVersionError("unsupported archive version " + std::to_string(version));
  }
  FeatureArchive archive;
  archive.num_layers = static_cast<std::uint32_t>(cur.read_le(4));
  archive.feature_dim = static_cast<std::uint32_t>(cur.read_le(4));
  const auto num_utts = static_cast<std::uint32_t>(cur.read_le(4));

  std::vector<std::uint64_t> offsets;
  archive.utterances.reserve(num_utts);
  for (std::uint32_t u = 0; u < num_utts; ++u) {
    Utterance utt;
    const auto id_len = static_cast<std::size_t>(cur.read_le(2));
    utt.id = std::string(cur.read_bytes(id_len));
    utt.num_frames = static_cast<std::uint32_t>(cur.read_le(4));
    offsets.push_back(cur.read_le(8));
    archive.utterances.push_back(std::move(utt));
  }

  std::uint64_t expected_offset = cur.pos();
  for (std::uint32_t u = 0; u < num_utts; ++u) {
    auto& utt = archive.utterances[u];
    const std::uint64_t count =
        std::uint64_t{archive.num_layers} * utt.num_frames * archive.feature_dim;
    if (offsets[u] != expected_offset) {
      throw CorruptionError("payload offset mismatch for " + utt.id);
    }
    if (count * 4 > data.size() - std::min<std::uint64_t>(offsets[u], data.size())) {
      throw CorruptionError("payload truncated for " + utt.id);
    }
    const std::string_view bytes(data.data() + offsets[u], count * 4);
    utt.frames.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) utt.frames[i] = decode_f32(bytes, i);
    expected_offset += count * 4;
  }
  if (expected_offset != data.size()) {
    throw CorruptionError("trailing bytes after archive payload");
  }
  archive.validate();
  return archive;
}

void save_archive(const FeatureArchive& archive, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_archive(archive, out);
}

FeatureArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_archive(in);
}

void SynthSpec::validate() const {
  if (num_classes < 2 || num_classes > 26) {
    throw ArgumentError("num_classes must be in [2, 26]");
  }
  if (num_layers == 0) throw ArgumentError("num_layers must be >= 1");
  if (feature_dim == 0) throw ArgumentError("feature_dim must be >= 1");
  if (planted_layer < 1 || planted_layer > num_layers) {
    throw ArgumentError("planted_layer must be in [1, num_layers]");
  }
  if (frames_per_symbol == 0) throw ArgumentError("frames_per_symbol must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ArgumentError("noise_sigma must be finite and >= 0");
  }
  if (min_symbols == 0 || min_symbols > max_symbols) {
    throw ArgumentError("need 1 <= min_symbols <= max_symbols");
  }
  if (!(frame_shift_seconds > 0.0)) throw ArgumentError("frame_shift_seconds must be > 0");
}

SynthCorpus synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t D = spec.feature_dim;

  // Class means: standard normal, rescaled up if closer than the separation floor.
  std::vector<std::vector<double>> means;
  double min_dist = 0.0;
  do {
    means.assign(spec.num_classes, std::vector<double>(D));
    for (auto& m : means) {
      for (auto& x : m) x = normal(rng);
    }
    min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < means.size(); ++a) {
      for (std::size_t b = a + 1; b < means.size(); ++b) {
        double d2 = 0.0;
        for (std::size_t d = 0; d < D; ++d) d2 += (means[a][d] - means[b][d]) * (means[a][d] - means[b][d]);
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
    }
  } while (!(min_dist > 0.0));
  const double floor = kClassSeparation * spec.noise_sigma;
  if (min_dist < floor) {
    const double scale = floor / min_dist;
    for (auto& m : means) {
      for (auto& x : m) x *= scale;
    }
  }

  SynthCorpus corpus;
  corpus.archive.num_layers = spec.num_layers;
  corpus.archive.feature_dim = spec.feature_dim;
  std::uniform_int_distribution<std::uint32_t> length_dist(spec.min_symbols, spec.max_symbols);
  const int width = static_cast<int>(std::to_string(spec.num_utts).size());

  for (std::uint32_t u = 0; u < spec.num_utts; ++u) {
    std::string id = std::to_string(u);
    id = "synth-" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0') + id;

    const std::uint32_t n_sym = length_dist(rng);
    std::vector<std::uint32_t> symbols;
    for (std::uint32_t s = 0; s < n_sym; ++s) {
      if (symbols.empty()) {
        symbols.push_back(std::uniform_int_distribution<std::uint32_t>(0, spec.num_classes - 1)(rng));
      } else {
        // Uniform over the classes other than the previous one.
        auto c = std::uniform_int_distribution<std::uint32_t>(0, spec.num_classes - 2)(rng);
        if (c >= symbols.back()) ++c;
        symbols.push_back(c);
      }
    }

    Utterance utt;
    utt.id = id;
    utt.num_frames = n_sym * spec.frames_per_symbol;
    const std::size_t T = utt.num_frames;
    utt.frames.resize(std::size_t{spec.num_layers} * T * D);
    for (std::uint32_t l = 0; l < spec.num_layers; ++l) {
      const bool planted = (l + 1 == spec.planted_layer);
      for (std::size_t t = 0; t < T; ++t) {
        const auto& mean = means[symbols[t / spec.frames_per_symbol]];
        float* dst = utt.frames.data() + (l * T + t) * D;
        for (std::size_t d = 0; d < D; ++d) {
          const double n = normal(rng);
          dst[d] = static_cast<float>(planted ? mean[d] + spec.noise_sigma * n : n);
        }
      }
    }

    std::string text;
    for (auto s : symbols) text.push_back(static_cast<char>('a' + s));
    corpus.transcripts.emplace(id, std::move(text));
    corpus.durations.emplace(id, format_double(static_cast<double>(T) * spec.frame_shift_seconds));
    corpus.archive.utterances.push_back(std::move(utt));
  }
  corpus.class_means = std::move(means);
  return corpus;
}

}  // namespace dsu
