#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uhdformer/errors.hpp"
#include "uhdformer/rng.hpp"

namespace uhd {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }
inline size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

// Rank-4 extents in (batch, channel, row, col) order, row-major.
struct Shape {
    std::array<int64_t, 4> d{0, 0, 0, 0};

    Shape() = default;
    Shape(int64_t n, int64_t c, int64_t h, int64_t w) : d{n, c, h, w} {}

    int64_t n() const { return d[0]; }
    int64_t c() const { return d[1]; }
    int64_t h() const { return d[2]; }
    int64_t w() const { return d[3]; }
    int64_t operator[](int i) const { return d[static_cast<size_t>(i)]; }

    // Element count; throws SizeError on negative extents or overflow.
    int64_t numel() const;

    bool operator==(const Shape& o) const { return d == o.d; }
    bool operator!=(const Shape& o) const { return d != o.d; }

    std::string str() const;
};

namespace detail {

// Backing buffer. Shared between tensor aliases, so in-place parameter
// updates are visible through every handle. The tape link lives here for the
// same reason: watching a parameter through the registry must mark the
// copies held inside the blocks.
struct Storage {
    DType dtype = DType::F32;
    std::vector<float> f32;
    std::vector<double> f64;

    // Tape link: valid only while (tape_gen == generation of the active
    // tape). Stale links from destroyed tapes are ignored by the ops.
    uint64_t tape_gen = 0;
    int32_t tape_node = -1;
};

}  // namespace detail

// Value-semantic rank-4 tensor. Copies share the underlying buffer; all ops
// allocate fresh outputs (no aliasing views), so shared buffers only ever
// change through explicit in-place parameter updates.
class Tensor {
public:
    Tensor() = default;
    Tensor(const Shape& shape, DType dtype);

    static Tensor zeros(const Shape& shape, DType dtype = DType::F32);
    static Tensor full(const Shape& shape, double value, DType dtype = DType::F32);
    static Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi, DType dtype = DType::F32);
    static Tensor normal(const Shape& shape, Rng& rng, double mean, double stddev, DType dtype = DType::F32);
    // Row-major scalars; length must equal shape.numel().
    static Tensor from_values(const Shape& shape, std::span<const double> values, DType dtype = DType::F32);

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    DType dtype() const { return storage_ ? storage_->dtype : DType::F32; }
    int64_t numel() const { return shape_.numel(); }

    template <typename T>
    std::span<T> data() {
        if constexpr (std::is_same_v<T, float>)
            return storage_->f32;
        else
            return storage_->f64;
    }
    template <typename T>
    std::span<const T> data() const {
        if constexpr (std::is_same_v<T, float>)
            return storage_->f32;
        else
            return storage_->f64;
    }

    // Element access through the double lens regardless of dtype. Slow path,
    // meant for tests, init and IO, not kernels.
    double at(int64_t i) const;
    void set(int64_t i, double v);
    double at(int64_t n, int64_t c, int64_t h, int64_t w) const;
    void set(int64_t n, int64_t c, int64_t h, int64_t w, double v);

    // Scalar extraction; requires numel() == 1.
    double item() const;

    // Deep copy with its own storage (and no tape link).
    Tensor clone() const;
    // Deep copy converted to the given dtype.
    Tensor to(DType dtype) const;

    // Overwrites this tensor's buffer with src's values (shape must match;
    // dtype converted). Existing aliases observe the change.
    void copy_from(const Tensor& src);

    bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }
    detail::Storage* storage() const { return storage_.get(); }

    // Tape bookkeeping, used by the tape and the ops.
    uint64_t tape_gen() const { return storage_ ? storage_->tape_gen : 0; }
    int32_t tape_node() const { return storage_ ? storage_->tape_node : -1; }
    void set_tape_link(uint64_t gen, int32_t node) const {
        storage_->tape_gen = gen;
        storage_->tape_node = node;
    }

private:
    Shape shape_;
    std::shared_ptr<detail::Storage> storage_;
};

// Invokes f.operator()<T>() with T = float or double according to dt.
template <typename F>
decltype(auto) dispatch(DType dt, F&& f) {
    if (dt == DType::F32)
        return f.template operator()<float>();
    else
        return f.template operator()<double>();
}

// Throws ShapeError unless a and b agree in shape and dtype.
void check_same(const Tensor& a, const Tensor& b, const char* op);

}  // namespace uhd
