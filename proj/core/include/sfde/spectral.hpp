#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "sfde/autodiff.hpp"

// Real 2-D Fourier analysis over the last two axes. Forward transforms are
// unnormalized; inverses carry 1 / (H W).
namespace sfde::spectral {

/// Half-width spectrum: real and imaginary planes shaped [..., H, W/2 + 1].
template <typename T>
struct ComplexSpectrum {
  Tensor<T> real;
  Tensor<T> imag;
  std::size_t source_width = 0;

  const Shape& shape() const { return real.shape(); }
};

inline std::size_t half_width(std::size_t width) { return width / 2 + 1; }

/// In-place complex DFT of any length; inverse applies no scaling.
void fft(std::vector<std::complex<double>>& data, bool inverse);

template <typename T> ComplexSpectrum<T> rfft2(const Tensor<T>& x);
template <typename T> Tensor<T> irfft2(const ComplexSpectrum<T>& s);
template <typename T> Tensor<T> amplitude(const ComplexSpectrum<T>& s);
/// atan2(imag, real) in (-pi, pi]; 0 for an exactly zero bin.
template <typename T> Tensor<T> phase(const ComplexSpectrum<T>& s);
template <typename T>
ComplexSpectrum<T> polar_recompose(const Tensor<T>& amp, const Tensor<T>& phi, std::size_t source_width);

double phase_of(double re, double im);

// Taped variants. Spectra on a tape are tensors [..., H, W', 2] holding
// (real, imag) pairs in the trailing axis.
template <typename T> Var<T> rfft2(Var<T> x);
template <typename T> Var<T> irfft2(Var<T> s, std::size_t source_width);
template <typename T> Var<T> amplitude(Var<T> s);
template <typename T> Var<T> phase(Var<T> s);
template <typename T> Var<T> polar_recompose(Var<T> amp, Var<T> phi);

template <typename T> Tensor<T> interleave(const ComplexSpectrum<T>& s);
template <typename T> ComplexSpectrum<T> deinterleave(const Tensor<T>& packed, std::size_t source_width);

namespace testing {
/// Fault injection for the self-test: scales every inverse by an extra factor of 2.
void corrupt_inverse_normalization(bool on);
bool inverse_normalization_corrupted();
}  // namespace testing

}  // namespace sfde::spectral
