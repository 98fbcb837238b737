#include "dsu/tokenproc.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>

#include "dsu/common.hpp"
#include "dsu/text.hpp"

namespace dsu {
namespace {

// Replaces every non-overlapping (left, right) occurrence, scanning left to
// right.
std::vector<Token> apply_merge(std::span<const Token> seq, const BpeMerge& m) {
  std::vector<Token> out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i + 1 < seq.size() && seq[i] == m.left && seq[i + 1] == m.right) {
      out.push_back(m.token);
      ++i;
    } else {
      out.push_back(seq[i]);
    }
  }
  return out;
}

void check_base_units(std::span<const Token> units, std::size_t base) {
  for (Token u : units) {
    if (u < 0 || static_cast<std::size_t>(u) >= base) {
      throw ArgumentError("unit " + std::to_string(u) + " outside base vocabulary of size " + std::to_string(base));
    }
  }
}

}  // namespace

std::vector<UnitSequence> read_units(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<UnitSequence> corpus;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    UnitSequence seq;
    seq.utt_id = line.substr(0, tab);
    if (!seen.insert(seq.utt_id).second) throw ValidationError("duplicate utt_id " + seq.utt_id);
    if (tab != std::string::npos) {
      for (auto tok : split_ws(std::string_view(line).substr(tab + 1))) {
        const auto v = parse_int(tok);
        if (v < 0 || v > INT32_MAX) throw FormatError("unit out of range in " + path.string());
        seq.units.push_back(static_cast<Token>(v));
      }
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

void write_units(const std::filesystem::path& path, std::span<const UnitSequence> corpus) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& seq : corpus) {
    out << seq.utt_id << '\t';
    for (std::size_t i = 0; i < seq.units.size(); ++i) {
      if (i) out << ' ';
      out << seq.units[i];
    }
    out << '\n';
  }
}

std::vector<Token> dedup(std::span<const Token> units) {
  std::vector<Token> out;
  for (Token u : units) {
    if (out.empty() || out.back() != u) out.push_back(u);
  }
  return out;
}

UnitSequence dedup(const UnitSequence& seq) { return {seq.utt_id, dedup(std::span<const Token>(seq.units))}; }

BpeModel::BpeModel(std::size_t base_vocab_size, std::vector<BpeMerge> merges)
    : base_(base_vocab_size), merges_(std::move(merges)) {
  spans_.reserve(merges_.size());
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto& m = merges_[i];
    const auto defined = static_cast<Token>(base_ + i);
    if (m.token != defined) throw ValidationError("merge tokens must be consecutive from base_vocab_size");
    if (m.left < 0 || m.right < 0 || m.left >= defined || m.right >= defined) {
      throw ValidationError("merge references token not yet defined");
    }
    spans_.push_back(span_of(m.left) + span_of(m.right));
  }
}

std::size_t BpeModel::span_of(Token token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_size()) {
    throw ArgumentError("token " + std::to_string(token) + " outside vocabulary");
  }
  const auto t = static_cast<std::size_t>(token);
  return t < base_ ? 1 : spans_[t - base_];
}

std::size_t BpeModel::max_span() const {
  std::size_t best = 1;
  for (auto s : spans_) best = std::max(best, s);
  return best;
}

BpeModel bpe_train(std::span<const std::vector<Token>> corpus, std::size_t base_vocab_size, std::size_t num_merges) {
  if (corpus.empty()) throw ArgumentError("bpe_train needs a non-empty corpus");
  std::vector<std::vector<Token>> work(corpus.begin(), corpus.end());
  for (const auto& seq : work) check_base_units(seq, base_vocab_size);

  std::vector<BpeMerge> merges;
  while (merges.size() < num_merges) {
    std::map<std::pair<Token, Token>, std::size_t> counts;
    for (const auto& seq : work) {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];
    }
    // std::map iterates pairs in lexicographic order, so strict > keeps the
    // smallest pair among ties.
    std::pair<Token, Token> best{};
    std::size_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    if (best_count < 2) break;
    const BpeMerge m{best.first, best.second, static_cast<Token>(base_vocab_size + merges.size())};
    for (auto& seq : work) seq = apply_merge(seq, m);
    merges.push_back(m);
  }
  return BpeModel(base_vocab_size, std::move(merges));
}

std::vector<Token> bpe_encode(std::span<const Token> units, const BpeModel& model) {
  check_base_units(units, model.base_vocab_size());
  std::vector<Token> seq(units.begin(), units.end());
  for (const auto& m : model.merges()) {
    if (seq.size() < 2) break;
    seq = apply_merge(seq, m);
  }
  return seq;
}

std::vector<Token> bpe_decode(std::span<const Token> tokens, const BpeModel& model) {
  const std::size_t base = model.base_vocab_size();
  std::vector<Token> out;
  std::vector<Token> stack;
  for (Token t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= model.vocab_size()) {
      throw ArgumentError("token " + std::to_string(t) + " outside vocabulary");
    }
    stack.push_back(t);
    while (!stack.empty()) {
      const Token top = stack.back();
      stack.pop_back();
      if (static_cast<std::size_t>(top) < base) {
        out.push_back(top);
      } else {
        const auto& m = model.merges()[static_cast<std::size_t>(top) - base];
        stack.push_back(m.right);
        stack.push_back(m.left);
      }
    }
  }
  return out;
}

void write_bpe(const BpeModel& model, std::ostream& out) {
  out << "dsu-bpe v1 " << model.base_vocab_size() << '\n';
  for (const auto& m : model.merges()) out << m.left << ' ' << m.right << ' ' << m.token << '\n';
}

BpeModel read_bpe(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("bpe model: empty file");
  const auto head = split_ws(line);
  if (head.size() != 3 || head[0] != "dsu-bpe") throw FormatError("bpe model: bad header");
  if (head[1] != "v1") throw UnsupportedVersionError("bpe model: unsupported version");
  const auto base = parse_int(head[2]);
  if (base < 0) throw FormatError("bpe model: negative base vocab");
  std::vector<BpeMerge> merges;
  while (std::getline(in, line)) {
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 3) throw FormatError("bpe model: expected 'left right new'");
    merges.push_back({static_cast<Token>(parse_int(toks[0])), static_cast<Token>(parse_int(toks[1])),
                      static_cast<Token>(parse_int(toks[2]))});
  }
  return BpeModel(static_cast<std::size_t>(base), std::move(merges));
}

void save_bpe(const BpeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_bpe(model, out);
}

BpeModel load_bpe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_bpe(in);
}

double bitrate(std::span<const std::vector<Token>> corpus, std::size_t vocab_size, double total_duration_seconds) {
  if (!(total_duration_seconds > 0.0)) throw ArgumentError("bitrate needs a positive duration");
  if (vocab_size < 2) throw ArgumentError("bitrate needs vocab_size >= 2");
  std::size_t tokens = 0;
  for (const auto& seq : corpus) tokens += seq.size();
  return static_cast<double>(tokens) * std::log2(static_cast<double>(vocab_size)) / total_duration_seconds;
}

}  // namespace dsu
