#pragma once

#include <complex>
#include <span>
#include <vector>

namespace segsel::detail {

/// Real-to-complex DFT, n/2+1 bins, unnormalised.
std::vector<std::complex<double>> rfft(std::span<const double> x);

/// Inverse of rfft for a length-n signal, normalised so irfft(rfft(x)) == x.
std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n);

}  // namespace segsel::detail
