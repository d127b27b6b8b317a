#pragma once

#include <cstddef>
#include <cstdint>

#include "gasca/kernels.hpp"

namespace gasca::kernels::detail {

void add_macs(std::uint64_t n);
void check_conv_buffers(const ConvGeometry& g, std::size_t in, std::size_t w, std::size_t bias, std::size_t out);
void check_matmul_buffers(std::size_t m, std::size_t k, std::size_t n, std::size_t a, std::size_t b, std::size_t c);

}  // namespace gasca::kernels::detail
