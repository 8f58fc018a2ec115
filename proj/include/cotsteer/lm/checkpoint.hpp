#pragma once

// Checkpoint file: magic, format version, model shape, vocabulary, then the
// raw float32 parameter buffer in layout order, and a trailing checksum of
// the parameter bytes. Little-endian throughout.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/textio.hpp"
#include "cotsteer/lm/config.hpp"
#include "cotsteer/lm/model.hpp"
#include "cotsteer/lm/tokenizer.hpp"

namespace cotsteer::lm {

struct LocalBundle {
  ModelWeights weights;
  Tokenizer tok;
};

namespace detail {

constexpr char kCkptMagic[8] = {'C', 'O', 'T', 'S', 'L', 'M', '0', '1'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class ByteReader {
 public:
  ByteReader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > s_.size()) fail(Errc::checkpoint_format, "checkpoint truncated");
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(size_t n) {
    if (pos_ + n > s_.size()) fail(Errc::checkpoint_format, "checkpoint truncated");
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  size_t remaining() const { return s_.size() - pos_; }

 private:
  const std::string& s_;
  size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w,
                            const Tokenizer& tok) {
  w.cfg.validate();
  if ((int)tok.vocab_size() != w.cfg.vocab_size)
    fail(Errc::config_invalid, "tokenizer vocabulary does not match model vocab_size");
  std::string out;
  out.append(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::put<uint32_t>(out, detail::kCkptVersion);
  detail::put<int32_t>(out, w.cfg.n_layers);
  detail::put<int32_t>(out, w.cfg.n_heads);
  detail::put<int32_t>(out, w.cfg.d_model);
  detail::put<int32_t>(out, w.cfg.max_seq_len);
  detail::put<int32_t>(out, w.cfg.vocab_size);
  detail::put<uint64_t>(out, w.cfg.seed);
  detail::put<uint32_t>(out, uint32_t(tok.vocab_size()));
  for (const auto& word : tok.words()) {
    detail::put<uint32_t>(out, uint32_t(word.size()));
    out.append(word);
  }
  detail::put<uint64_t>(out, uint64_t(w.data.size()));
  out.append(reinterpret_cast<const char*>(w.data.data()), w.data.size() * sizeof(float));
  detail::put<uint64_t>(out, w.checksum());
  write_text(path, out);
}

inline LocalBundle load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = read_text(path);
  detail::ByteReader in(raw);
  const std::string magic = in.get_bytes(sizeof(detail::kCkptMagic));
  if (std::memcmp(magic.data(), detail::kCkptMagic, sizeof(detail::kCkptMagic)) != 0)
    fail(Errc::checkpoint_format, "bad checkpoint magic");
  const uint32_t version = in.get<uint32_t>();
  if (version != detail::kCkptVersion)
    fail(Errc::checkpoint_format, "unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  cfg.n_layers = in.get<int32_t>();
  cfg.n_heads = in.get<int32_t>();
  cfg.d_model = in.get<int32_t>();
  cfg.max_seq_len = in.get<int32_t>();
  cfg.vocab_size = in.get<int32_t>();
  cfg.seed = in.get<uint64_t>();
  try {
    cfg.validate();
  } catch (const Error&) {
    fail(Errc::checkpoint_format, "checkpoint carries an invalid model shape");
  }

  const uint32_t n_words = in.get<uint32_t>();
  if ((int)n_words != cfg.vocab_size)
    fail(Errc::checkpoint_format, "vocabulary size does not match model shape");
  std::vector<std::string> words;
  words.reserve(n_words);
  for (uint32_t i = 0; i < n_words; ++i) {
    const uint32_t len = in.get<uint32_t>();
    if (len > 1u << 20) fail(Errc::checkpoint_format, "implausible vocabulary entry");
    words.push_back(in.get_bytes(len));
  }

  LocalBundle bundle;
  bundle.weights.cfg = cfg;
  const uint64_t count = in.get<uint64_t>();
  size_t expected = 0;
  for (const auto& t : ModelWeights::layout(cfg)) expected += t.count();
  if (count != expected) fail(Errc::checkpoint_format, "parameter count does not match shape");
  const std::string bytes = in.get_bytes(size_t(count) * sizeof(float));
  bundle.weights.data.resize(count);
  std::memcpy(bundle.weights.data.data(), bytes.data(), bytes.size());
  const uint64_t sum = in.get<uint64_t>();
  if (sum != bundle.weights.checksum())
    fail(Errc::checkpoint_format, "checkpoint checksum mismatch");
  if (in.remaining() != 0) fail(Errc::checkpoint_format, "trailing bytes after checkpoint");

  try {
    bundle.tok = Tokenizer::from_words(words);
  } catch (const Error&) {
    fail(Errc::checkpoint_format, "checkpoint vocabulary is malformed");
  }
  return bundle;
}

}  // namespace cotsteer::lm
