#pragma once

// Gaussian set binary format (little-endian):
//   "O4DG" | u32 version=1 | u32 count Q | u32 class count C
//   Q records of f64 fields in order:
//     mu_s[3] mu_t log_scales[3] quat[4] log_sigma_t opacity_logit
//     logits[C] v_dyn[2] alpha
// Records are (16 + C) * 8 bytes each.

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/binary_io.hpp"
#include "occ4d/core.hpp"

namespace occ4d {

inline constexpr std::uint32_t kGaussianFormatVersion = 1;

inline void encode_gaussians(io::ByteWriter& w, const std::vector<Gaussian4D>& gaussians,
                             int num_classes) {
  w.magic("O4DG");
  w.u32(kGaussianFormatVersion);
  w.u32(static_cast<std::uint32_t>(gaussians.size()));
  w.u32(static_cast<std::uint32_t>(num_classes));
  for (std::size_t q = 0; q < gaussians.size(); ++q) {
    const auto& g = gaussians[q];
    if (g.num_classes() != num_classes) {
      fail(ErrorKind::validation, "encode_gaussians: primitive " + std::to_string(q) +
                                      " has " + std::to_string(g.num_classes()) +
                                      " logits, expected " + std::to_string(num_classes));
    }
    for (int i = 0; i < 3; ++i) w.f64(g.mu_s[i]);
    w.f64(g.mu_t);
    for (int i = 0; i < 3; ++i) w.f64(g.log_scales[i]);
    for (int i = 0; i < 4; ++i) w.f64(g.quat[i]);
    w.f64(g.log_sigma_t);
    w.f64(g.opacity_logit);
    for (int c = 0; c < num_classes; ++c) w.f64(g.logits[c]);
    w.f64(g.v_dyn[0]);
    w.f64(g.v_dyn[1]);
    w.f64(g.alpha);
  }
}

inline std::vector<Gaussian4D> decode_gaussians(io::ByteReader& r, int* num_classes_out = nullptr) {
  r.expect_magic("O4DG", "gaussian set");
  const auto version = r.u32();
  if (version != kGaussianFormatVersion) {
    fail(ErrorKind::io, "gaussian set: unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  const int classes = static_cast<int>(r.u32());
  std::vector<Gaussian4D> out(count);
  for (auto& g : out) {
    for (int i = 0; i < 3; ++i) g.mu_s[i] = r.f64();
    g.mu_t = r.f64();
    for (int i = 0; i < 3; ++i) g.log_scales[i] = r.f64();
    for (int i = 0; i < 4; ++i) g.quat[i] = r.f64();
    g.log_sigma_t = r.f64();
    g.opacity_logit = r.f64();
    g.logits.resize(classes);
    for (int c = 0; c < classes; ++c) g.logits[c] = r.f64();
    g.v_dyn[0] = r.f64();
    g.v_dyn[1] = r.f64();
    g.alpha = r.f64();
  }
  if (num_classes_out != nullptr) {
    *num_classes_out = classes;
  }
  return out;
}

inline void save_gaussians(const std::string& path, const std::vector<Gaussian4D>& gaussians,
                           int num_classes) {
  io::ByteWriter w;
  encode_gaussians(w, gaussians, num_classes);
  io::write_file(path, w.bytes());
}

inline std::vector<Gaussian4D> load_gaussians(const std::string& path, int* num_classes = nullptr) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  auto out = decode_gaussians(r, num_classes);
  if (!r.at_end()) {
    fail(ErrorKind::io, "gaussian set '" + path + "': trailing bytes");
  }
  return out;
}

/// Human-readable dump, one primitive per block. Not parsed back.
inline std::string dump_gaussians_text(const std::vector<Gaussian4D>& gaussians) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "gaussians " << gaussians.size() << "\n";
  for (std::size_t q = 0; q < gaussians.size(); ++q) {
    const auto& g = gaussians[q];
    os << "[" << q << "]\n";
    os << "  mu_s = " << g.mu_s.transpose() << "\n";
    os << "  mu_t = " << g.mu_t << "  sigma_t = " << g.sigma_t() << "\n";
    os << "  scales = " << g.scales().transpose() << "\n";
    os << "  quat = " << g.quat.transpose() << "\n";
    os << "  opacity = " << g.opacity() << "\n";
    os << "  logits = " << g.logits.transpose() << "\n";
    os << "  v_dyn = " << g.v_dyn.transpose() << "  alpha = " << g.alpha << "\n";
  }
  return os.str();
}

}  // namespace occ4d
