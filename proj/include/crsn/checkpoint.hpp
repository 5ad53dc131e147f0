#pragma once

// Checkpoint container: a 16-byte magic, the spectral config fields, the flat
// re/im arrays of the trainable basis (column-major) and the rho array, all
// 64-bit little-endian, closed by a CRC32 of every preceding byte. A JSON
// sidecar (<path>.json) mirrors the config and carries the target codebook so
// a checkpoint is self-contained for evaluation.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crsn/data.hpp"
#include "crsn/errors.hpp"
#include "crsn/spectral.hpp"
#include "crsn/targets.hpp"

namespace crsn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

inline constexpr char kCheckpointMagic[16] = {'C', 'R', 'S', 'N', '-', 'C',
                                              'K', 'P', 'T', '-', 'v', '1',
                                              '\0', '\0', '\0', '\0'};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 8);
}

inline void put_f64(std::vector<std::uint8_t>& out, const double* v,
                    std::size_t n) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v);
  out.insert(out.end(), p, p + 8 * n);
}

struct Reader {
  const std::uint8_t* p;
  std::size_t left;

  void need(std::size_t n) const {
    if (left < n) throw CkptCorrupt("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    p += 8;
    left -= 8;
    return v;
  }
  void f64(double* out, std::size_t n) {
    need(8 * n);
    std::memcpy(out, p, 8 * n);
    p += 8 * n;
    left -= 8 * n;
  }
};

inline nlohmann::json period_to_json(double t) {
  if (t == kInfinitePeriod) return "inf";
  return t;
}

inline double period_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kInfinitePeriod;
    throw CkptCorrupt("bad period string in sidecar");
  }
  return j.get<double>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const SpectralConfig& c) {
  nlohmann::json periods = nlohmann::json::array();
  for (double t : c.periods) periods.push_back(detail::period_to_json(t));
  return {{"n_total", c.n_total},       {"n_nonlinear", c.n_nonlinear},
          {"n_fixed", c.n_fixed},       {"periods", periods},
          {"warmup", c.warmup},         {"window", c.window},
          {"seed", c.seed}};
}

inline nlohmann::json codebook_to_json(const TargetCodebook& cb) {
  nlohmann::json coeff = nlohmann::json::array();
  for (int c = 0; c < cb.class_count; ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < cb.coefficients.cols(); ++k)
      row.push_back(cb.coefficients(c, k));
    coeff.push_back(row);
  }
  nlohmann::json periods = nlohmann::json::array();
  for (double t : cb.periods) periods.push_back(detail::period_to_json(t));
  return {{"class_count", cb.class_count}, {"coefficients", coeff},
          {"periods", periods},            {"window", cb.window},
          {"warmup", cb.warmup},           {"d_min", cb.d_min}};
}

inline TargetCodebook codebook_from_json(const nlohmann::json& j) {
  TargetCodebook cb;
  cb.class_count = j.at("class_count").get<int>();
  cb.window = j.at("window").get<int>();
  cb.warmup = j.at("warmup").get<int>();
  cb.d_min = j.at("d_min").get<double>();
  for (const auto& t : j.at("periods"))
    cb.periods.push_back(detail::period_from_json(t));
  const auto& coeff = j.at("coefficients");
  const int dim = coeff.empty() ? 0 : static_cast<int>(coeff[0].size());
  cb.coefficients.resize(cb.class_count, dim);
  for (int c = 0; c < cb.class_count; ++c)
    for (int k = 0; k < dim; ++k)
      cb.coefficients(c, k) = coeff[c][k].get<double>();
  return cb;
}

inline void save_checkpoint(const std::string& path, const SpectralModel& model,
                            const TargetCodebook* codebook = nullptr) {
  const SpectralConfig& c = model.config;
  std::vector<std::uint8_t> buf;
  buf.reserve(64 + 8 * (2 * model.trainable_basis.size() + model.rho.size()));
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 16);
  detail::put_u32(buf, static_cast<std::uint32_t>(c.n_total));
  detail::put_u32(buf, static_cast<std::uint32_t>(c.n_nonlinear));
  detail::put_u32(buf, static_cast<std::uint32_t>(c.n_fixed));
  detail::put_u32(buf, static_cast<std::uint32_t>(c.periods.size()));
  detail::put_f64(buf, c.periods.data(), c.periods.size());
  detail::put_u32(buf, static_cast<std::uint32_t>(c.warmup));
  detail::put_u32(buf, static_cast<std::uint32_t>(c.window));
  detail::put_u64(buf, c.seed);

  const Eigen::Index s = model.trainable_basis.size();
  std::vector<double> plane(static_cast<std::size_t>(s));
  const auto* base =
      reinterpret_cast<const double*>(model.trainable_basis.data());
  for (Eigen::Index k = 0; k < s; ++k) plane[k] = base[2 * k];  // re
  detail::put_f64(buf, plane.data(), plane.size());
  for (Eigen::Index k = 0; k < s; ++k) plane[k] = base[2 * k + 1];  // im
  detail::put_f64(buf, plane.data(), plane.size());
  detail::put_f64(buf, model.rho.data(), model.rho.size());

  detail::put_u32(buf, crc32_bytes(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataMissing("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataMissing("short write on checkpoint " + path);
  out.close();

  nlohmann::json sidecar = {{"config", config_to_json(c)}};
  if (codebook) sidecar["codebook"] = codebook_to_json(*codebook);
  std::ofstream js(path + ".json", std::ios::trunc);
  js << sidecar.dump() << "\n";
}

struct Checkpoint {
  SpectralModel model;
  std::optional<TargetCodebook> codebook;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataMissing("no such checkpoint: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 20) throw CkptCorrupt("checkpoint too small");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32_bytes(buf.data(), buf.size() - 4) != stored_crc)
    throw CkptCorrupt("checkpoint CRC mismatch");
  if (std::memcmp(buf.data(), kCheckpointMagic, 16) != 0)
    throw CkptCorrupt("bad checkpoint magic");

  detail::Reader r{buf.data() + 16, buf.size() - 20};
  SpectralConfig c;
  c.n_total = static_cast<int>(r.u32());
  c.n_nonlinear = static_cast<int>(r.u32());
  c.n_fixed = static_cast<int>(r.u32());
  const std::uint32_t n_periods = r.u32();
  c.periods.resize(n_periods);
  r.f64(c.periods.data(), n_periods);
  c.warmup = static_cast<int>(r.u32());
  c.window = static_cast<int>(r.u32());
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigInvalid& e) {
    throw CkptCorrupt(std::string("checkpoint config invalid: ") + e.what());
  }

  Checkpoint ck;
  ck.model.config = c;
  ck.model.fixed_basis.resize(c.n_total, c.n_fixed);
  ck.model.fixed_eigenvalues.resize(c.n_fixed);
  for (int k = 0; k < c.n_fixed; ++k) {
    ck.model.fixed_basis.col(k) = fixed_eigenvector(k + 1, c.n_total);
    ck.model.fixed_eigenvalues(k) = fixed_eigenvalue(c.periods[k]);
  }
  const Eigen::Index s =
      static_cast<Eigen::Index>(c.n_total) * c.n_trainable();
  std::vector<double> re(static_cast<std::size_t>(s)),
      im(static_cast<std::size_t>(s));
  r.f64(re.data(), re.size());
  r.f64(im.data(), im.size());
  ck.model.trainable_basis.resize(c.n_total, c.n_trainable());
  auto* base = reinterpret_cast<double*>(ck.model.trainable_basis.data());
  for (Eigen::Index k = 0; k < s; ++k) {
    base[2 * k] = re[static_cast<std::size_t>(k)];
    base[2 * k + 1] = im[static_cast<std::size_t>(k)];
  }
  ck.model.rho.resize(c.n_trainable());
  r.f64(ck.model.rho.data(), ck.model.rho.size());
  if (r.left != 0) throw CkptCorrupt("trailing bytes in checkpoint");

  const std::string sidecar_path = path + ".json";
  if (std::filesystem::exists(sidecar_path)) {
    std::ifstream js(sidecar_path);
    nlohmann::json sidecar;
    try {
      js >> sidecar;
      if (sidecar.contains("codebook"))
        ck.codebook = codebook_from_json(sidecar["codebook"]);
    } catch (const nlohmann::json::exception& e) {
      throw CkptCorrupt(std::string("sidecar parse error: ") + e.what());
    }
  }
  return ck;
}

}  // namespace crsn
