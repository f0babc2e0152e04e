#include "patchrl/params_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace patchrl::io {

void write_params_bin(const std::string& path, const std::vector<nn::Arr>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  const char magic[4] = {'P', 'R', 'L', 'W'};
  f.write(magic, 4);
  const std::uint32_t n = static_cast<std::uint32_t>(params.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  for (const auto& p : params) {
    const std::uint64_t count = static_cast<std::uint64_t>(p.size());
    f.write(reinterpret_cast<const char*>(&count), 8);
    f.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  }
}

std::vector<nn::Arr> read_params_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "PRLW", 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  std::uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  std::vector<nn::Arr> params;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 8);
    nn::Arr p(static_cast<Eigen::Index>(count));
    f.read(reinterpret_cast<char*>(p.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    params.push_back(std::move(p));
  }
  if (!f) throw std::runtime_error("truncated checkpoint " + path);
  return params;
}

}  // namespace patchrl::io
