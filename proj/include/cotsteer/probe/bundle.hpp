#pragma once

// Probe bundle file: magic, version, grid shape (layers, heads, d_head),
// dataset size and split seed, then per-head records (layer, head, theta,
// bias, val_accuracy, sigma) and a trailing checksum. Little-endian.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/common/textio.hpp"
#include "cotsteer/lm/checkpoint.hpp"
#include "cotsteer/probe/steer.hpp"

namespace cotsteer::probe {

struct ProbeBundle {
  int n_layers = 0;
  int n_heads = 0;
  int d_head = 0;
  int n_points = 0;  // size of the probing dataset the fits came from
  uint64_t seed = 0;
  std::vector<Probe> probes;  // layer-major, one per (layer, head)
};

namespace detail {

constexpr char kBundleMagic[8] = {'C', 'O', 'T', 'S', 'P', 'R', 'B', '1'};
constexpr uint32_t kBundleVersion = 1;

inline void check_grid(const ProbeBundle& b) {
  if (b.n_layers < 1 || b.n_heads < 1 || b.d_head < 1 || b.n_points < 0)
    fail(Errc::checkpoint_format, "bad probe bundle shape");
  if (b.probes.size() != size_t(b.n_layers) * size_t(b.n_heads))
    fail(Errc::checkpoint_format, "probe count does not cover the grid");
  for (int l = 0; l < b.n_layers; ++l)
    for (int h = 0; h < b.n_heads; ++h) {
      const Probe& p = b.probes[size_t(l) * b.n_heads + h];
      if (p.layer != l || p.head != h)
        fail(Errc::checkpoint_format, "probes must be layer-major over the grid");
      if (p.theta.size() != size_t(b.d_head))
        fail(Errc::checkpoint_format, "probe width does not match d_head");
    }
}

}  // namespace detail

inline void save_probe_bundle(const std::filesystem::path& path, const ProbeBundle& b) {
  detail::check_grid(b);
  std::string out;
  out.append(detail::kBundleMagic, sizeof(detail::kBundleMagic));
  lm::detail::put<uint32_t>(out, detail::kBundleVersion);
  lm::detail::put<int32_t>(out, b.n_layers);
  lm::detail::put<int32_t>(out, b.n_heads);
  lm::detail::put<int32_t>(out, b.d_head);
  lm::detail::put<int32_t>(out, b.n_points);
  lm::detail::put<uint64_t>(out, b.seed);
  for (const Probe& p : b.probes) {
    lm::detail::put<int32_t>(out, p.layer);
    lm::detail::put<int32_t>(out, p.head);
    for (double t : p.theta) lm::detail::put<double>(out, t);
    lm::detail::put<double>(out, p.bias);
    lm::detail::put<double>(out, p.val_accuracy);
    lm::detail::put<double>(out, p.sigma);
  }
  lm::detail::put<uint64_t>(out, hash_str(out));
  write_text(path, out);
}

inline ProbeBundle load_probe_bundle(const std::filesystem::path& path) {
  const std::string raw = read_text(path);
  lm::detail::ByteReader r(raw);
  if (r.get_bytes(sizeof(detail::kBundleMagic)) !=
      std::string(detail::kBundleMagic, sizeof(detail::kBundleMagic)))
    fail(Errc::checkpoint_format, "not a probe bundle");
  if (r.get<uint32_t>() != detail::kBundleVersion)
    fail(Errc::checkpoint_format, "unsupported probe bundle version");

  ProbeBundle b;
  b.n_layers = r.get<int32_t>();
  b.n_heads = r.get<int32_t>();
  b.d_head = r.get<int32_t>();
  b.n_points = r.get<int32_t>();
  b.seed = r.get<uint64_t>();
  if (b.n_layers < 1 || b.n_heads < 1 || b.d_head < 1 || b.n_points < 0)
    fail(Errc::checkpoint_format, "bad probe bundle shape");
  for (int l = 0; l < b.n_layers; ++l) {
    for (int h = 0; h < b.n_heads; ++h) {
      Probe p;
      p.layer = r.get<int32_t>();
      p.head = r.get<int32_t>();
      p.theta.resize(size_t(b.d_head));
      for (double& t : p.theta) t = r.get<double>();
      p.bias = r.get<double>();
      p.val_accuracy = r.get<double>();
      p.sigma = r.get<double>();
      b.probes.push_back(std::move(p));
    }
  }
  const uint64_t expect = hash_str(std::string_view(raw.data(), raw.size() - r.remaining()));
  if (r.get<uint64_t>() != expect) fail(Errc::checkpoint_format, "probe bundle checksum mismatch");
  if (r.remaining() != 0) fail(Errc::checkpoint_format, "trailing bytes after probe bundle");
  detail::check_grid(b);
  return b;
}

// Validation-accuracy grid as CSV, one row per layer.
inline std::string accuracy_heatmap_csv(const ProbeBundle& b) {
  detail::check_grid(b);
  std::string out = "layer";
  for (int h = 0; h < b.n_heads; ++h) out += ",head_" + std::to_string(h);
  out += "\n";
  char buf[32];
  for (int l = 0; l < b.n_layers; ++l) {
    out += std::to_string(l);
    for (int h = 0; h < b.n_heads; ++h) {
      std::snprintf(buf, sizeof(buf), ",%.6f", b.probes[size_t(l) * b.n_heads + h].val_accuracy);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace cotsteer::probe
