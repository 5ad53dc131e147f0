#pragma once

// Optional MNIST download. Files land in the data directory as .gz and are
// verified against the pinned decompressed sizes and payload checksums
// before use.

#ifdef CRSN_WITH_TLS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "crsn/data.hpp"
#include "crsn/errors.hpp"

namespace crsn {

inline constexpr const char* kMnistDefaultUrlBase =
    "https://ossci-datasets.s3.amazonaws.com/mnist/";

inline void verify_mnist_file(const std::string& path,
                              const MnistGolden& golden) {
  const auto bytes = read_file_auto(path);
  if (bytes.size() != golden.decompressed_size)
    throw DataMissing(path + ": decompressed size " +
                      std::to_string(bytes.size()) + " != expected " +
                      std::to_string(golden.decompressed_size));
  const std::size_t header =
      std::string(golden.filename).find("images") != std::string::npos ? 16 : 8;
  const std::uint32_t crc = crc32_bytes(bytes.data() + header,
                                        bytes.size() - header);
  if (crc != golden.payload_crc32)
    throw DataMissing(path + ": payload checksum mismatch");
}

// Downloads the four MNIST files into dir (skipping ones already present)
// and verifies each against the pinned goldens.
inline void fetch_mnist(const std::string& dir, std::string url_base) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (url_base.empty()) url_base = kMnistDefaultUrlBase;

  // Split "scheme://host" from the path prefix.
  const auto scheme_end = url_base.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigInvalid("download url must start with http(s)://");
  const auto path_start = url_base.find('/', scheme_end + 3);
  const std::string origin =
      path_start == std::string::npos ? url_base : url_base.substr(0, path_start);
  std::string prefix =
      path_start == std::string::npos ? "/" : url_base.substr(path_start);
  if (prefix.empty() || prefix.back() != '/') prefix += '/';

  for (const MnistGolden& g : kMnistGoldens) {
    const std::string dest = (fs::path(dir) / (std::string(g.filename) + ".gz")).string();
    const std::string plain = (fs::path(dir) / g.filename).string();
    if (fs::exists(dest) || fs::exists(plain)) {
      verify_mnist_file(fs::exists(dest) ? dest : plain, g);
      continue;
    }
    httplib::Client client(origin);
    client.set_follow_location(true);
    client.set_read_timeout(120, 0);
    auto res = client.Get(prefix + g.filename + ".gz");
    if (!res || res->status != 200)
      throw DataMissing("download failed for " + std::string(g.filename) +
                        ".gz from " + origin +
                        (res ? " (status " + std::to_string(res->status) + ")"
                             : " (no response)"));
    std::ofstream out(dest, std::ios::binary | std::ios::trunc);
    out.write(res->body.data(),
              static_cast<std::streamsize>(res->body.size()));
    out.close();
    verify_mnist_file(dest, g);
  }
}

}  // namespace crsn
