#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "crsn/checkpoint.hpp"
#include "test_support.hpp"

using namespace crsn;
using crsn::test::bit_identical;
using crsn::test::TempDir;

namespace {

SpectralModel make_model() {
  SpectralConfig c;
  c.n_total = 30;
  c.n_nonlinear = 20;
  c.n_fixed = 3;
  c.periods = {kInfinitePeriod, 10.0, 4.0};
  c.warmup = 5;
  c.window = 12;
  c.seed = 99;
  return init_model(c);
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly with their sidecar") {
  TempDir tmp;
  const SpectralModel model = make_model();
  const TargetCodebook cb = default_codebook(model.config, 5);
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, model, &cb);

  const Checkpoint ck = load_checkpoint(path);
  CHECK(bit_identical(ck.model.trainable_basis, model.trainable_basis));
  CHECK(bit_identical(ck.model.rho, model.rho));
  CHECK(bit_identical(ck.model.fixed_basis, model.fixed_basis));
  CHECK(ck.model.config.n_total == model.config.n_total);
  CHECK(ck.model.config.periods[0] == kInfinitePeriod);
  CHECK(ck.model.config.periods[2] == 4.0);
  CHECK(ck.model.config.seed == model.config.seed);

  REQUIRE(ck.codebook.has_value());
  CHECK(ck.codebook->class_count == 5);
  CHECK(ck.codebook->d_min == Catch::Approx(cb.d_min));
  CHECK((ck.codebook->coefficients - cb.coefficients).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(ck.codebook->periods[0] == kInfinitePeriod);
}

TEST_CASE("a flipped byte fails the CRC") {
  TempDir tmp;
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, make_model());

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(200);
  char b;
  f.seekg(200);
  f.get(b);
  f.seekp(200);
  f.put(static_cast<char>(b ^ 0x40));
  f.close();
  CHECK_THROWS_AS(load_checkpoint(path), CkptCorrupt);
}

TEST_CASE("a truncated checkpoint is rejected") {
  TempDir tmp;
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, make_model());
  const auto full = read_file_auto(path);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(full.data()),
             static_cast<std::streamsize>(full.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), CkptCorrupt);
}

TEST_CASE("missing checkpoints raise DataMissing") {
  TempDir tmp;
  CHECK_THROWS_AS(load_checkpoint(tmp.file("absent.ckpt")), DataMissing);
}

TEST_CASE("a checkpoint without sidecar still loads the model") {
  TempDir tmp;
  const SpectralModel model = make_model();
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, model);
  std::filesystem::remove(path + ".json");
  const Checkpoint ck = load_checkpoint(path);
  CHECK_FALSE(ck.codebook.has_value());
  CHECK(bit_identical(ck.model.trainable_basis, model.trainable_basis));
}

TEST_CASE("wrong magic is reported as corrupt") {
  TempDir tmp;
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, make_model());
  auto bytes = read_file_auto(path);
  bytes[0] = 'X';
  // Re-stamp the CRC so only the magic is at fault.
  const std::uint32_t crc = crc32_bytes(bytes.data(), bytes.size() - 4);
  std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(load_checkpoint(path), CkptCorrupt);
}
