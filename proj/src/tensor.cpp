#include "wmnet/tensor.hpp"

#include <cmath>
#include <sstream>

#include "wmnet/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace wmnet {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::NotRecorded: return "not recorded";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::BadVersion: return "unsupported version";
    case ErrorKind::Truncated: return "truncated file";
    case ErrorKind::Usage: return "usage error";
  }
  return "error";
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

#if defined(__GLIBC__)
namespace {
// Activations run to tens of megabytes. glibc maps blocks that large freshly
// on every allocation, so each pass would page-fault and re-zero them; keeping
// them on the heap lets freed buffers be reused.
const bool kHeapConfigured = [] {
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
}  // namespace
#endif

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) {
      throw Error(ErrorKind::InvalidArgument,
                  "tensor dimensions must be positive, got " + shape_to_string(shape_));
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "shape " + shape_to_string(shape_) + " needs " +
                    std::to_string(shape_numel(shape_)) + " values, got " +
                    std::to_string(data_.size()));
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw Error(ErrorKind::InvalidArgument, "index rank " + std::to_string(index.size()) +
                                                " does not match tensor " +
                                                shape_to_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) {
      throw Error(ErrorKind::InvalidArgument, "index out of range for " + shape_to_string(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

float& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
float Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": " + shape_to_string(a.shape()) +
                                              " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace wmnet
