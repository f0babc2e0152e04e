#ifndef PATCHRL_PARAMS_IO_HPP
#define PATCHRL_PARAMS_IO_HPP

#include <string>
#include <vector>

#include "patchrl/nn.hpp"

namespace patchrl::io {

/// Raw little-endian float64 parameter container ("PRLW" blob).
void write_params_bin(const std::string& path, const std::vector<nn::Arr>& params);
std::vector<nn::Arr> read_params_bin(const std::string& path);

}  // namespace patchrl::io

#endif  // PATCHRL_PARAMS_IO_HPP
