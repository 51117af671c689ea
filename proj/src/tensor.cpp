#include "uhdformer/tensor.hpp"

#include <limits>
#include <sstream>

namespace uhd {

int64_t Shape::numel() const {
    int64_t prod = 1;
    for (int64_t e : d) {
        if (e < 0) throw SizeError("negative extent in shape " + str());
        if (e != 0 && prod > std::numeric_limits<int64_t>::max() / e)
            throw SizeError("extent product overflows in shape " + str());
        prod *= e;
    }
    return prod;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << d[0] << "," << d[1] << "," << d[2] << "," << d[3] << ")";
    return os.str();
}

Tensor::Tensor(const Shape& shape, DType dtype) : shape_(shape) {
    const int64_t n = shape.numel();
    storage_ = std::make_shared<detail::Storage>();
    storage_->dtype = dtype;
    if (dtype == DType::F32)
        storage_->f32.assign(static_cast<size_t>(n), 0.0f);
    else
        storage_->f64.assign(static_cast<size_t>(n), 0.0);
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return Tensor(shape, dtype); }

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
    Tensor t(shape, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto d = t.data<T>();
        for (auto& v : d) v = static_cast<T>(value);
    });
    return t;
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, double lo, double hi, DType dtype) {
    Tensor t(shape, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto d = t.data<T>();
        for (auto& v : d) v = static_cast<T>(rng.uniform(lo, hi));
    });
    return t;
}

Tensor Tensor::normal(const Shape& shape, Rng& rng, double mean, double stddev, DType dtype) {
    Tensor t(shape, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto d = t.data<T>();
        for (auto& v : d) v = static_cast<T>(rng.normal(mean, stddev));
    });
    return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
    Tensor t(shape, dtype);
    if (static_cast<int64_t>(values.size()) != shape.numel())
        throw ShapeError("from_values: got " + std::to_string(values.size()) +
                         " scalars for shape " + shape.str());
    dispatch(dtype, [&]<typename T>() {
        auto d = t.data<T>();
        for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
    });
    return t;
}

double Tensor::at(int64_t i) const {
    return dispatch(dtype(), [&]<typename T>() { return static_cast<double>(data<T>()[static_cast<size_t>(i)]); });
}

void Tensor::set(int64_t i, double v) {
    dispatch(dtype(), [&]<typename T>() { data<T>()[static_cast<size_t>(i)] = static_cast<T>(v); });
}

double Tensor::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return at(((n * shape_.c() + c) * shape_.h() + h) * shape_.w() + w);
}

void Tensor::set(int64_t n, int64_t c, int64_t h, int64_t w, double v) {
    set(((n * shape_.c() + c) * shape_.h() + h) * shape_.w() + w, v);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
    return at(0);
}

Tensor Tensor::clone() const {
    Tensor t(shape_, dtype());
    dispatch(dtype(), [&]<typename T>() {
        auto src = data<T>();
        auto dst = t.data<T>();
        std::copy(src.begin(), src.end(), dst.begin());
    });
    return t;
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) return clone();
    Tensor t(shape_, target);
    for (int64_t i = 0; i < numel(); ++i) t.set(i, at(i));
    return t;
}

void Tensor::copy_from(const Tensor& src) {
    if (src.shape() != shape_)
        throw ShapeError("copy_from: shape " + src.shape().str() + " into " + shape_.str());
    for (int64_t i = 0; i < numel(); ++i) set(i, src.at(i));
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
    if (a.dtype() != b.dtype())
        throw ShapeError(std::string(op) + ": dtypes " + dtype_name(a.dtype()) + " and " + dtype_name(b.dtype()) + " differ");
}

}  // namespace uhd
