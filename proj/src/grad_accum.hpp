#pragma once

// Internal helpers for backward closures, shared by the op translation
// units. Everything here works on raw buffers on purpose: backward math must
// never re-enter the recording ops while the tape is still active.

#include "uhdformer/tape.hpp"
#include "uhdformer/tensor.hpp"

namespace uhd::detail {

// grad(x) += g, if x is tracked on t.
inline void accum(Tape& t, const Tensor& x, const Tensor& g) {
    const int32_t id = t.node_of(x);
    if (id < 0) return;
    Tensor& buf = t.grad_buf(id);
    dispatch(buf.dtype(), [&]<typename T>() {
        auto pb = buf.data<T>();
        auto pg = g.data<T>();
        for (size_t i = 0; i < pb.size(); ++i) pb[i] += pg[i];
    });
}

// grad(x) += s * g.
inline void accum_scaled(Tape& t, const Tensor& x, const Tensor& g, double s) {
    const int32_t id = t.node_of(x);
    if (id < 0) return;
    Tensor& buf = t.grad_buf(id);
    dispatch(buf.dtype(), [&]<typename T>() {
        auto pb = buf.data<T>();
        auto pg = g.data<T>();
        const T sv = static_cast<T>(s);
        for (size_t i = 0; i < pb.size(); ++i) pb[i] += sv * pg[i];
    });
}

// grad(x) += g ⊙ f.
inline void accum_mul(Tape& t, const Tensor& x, const Tensor& g, const Tensor& f) {
    const int32_t id = t.node_of(x);
    if (id < 0) return;
    Tensor& buf = t.grad_buf(id);
    dispatch(buf.dtype(), [&]<typename T>() {
        auto pb = buf.data<T>();
        auto pg = g.data<T>();
        auto pf = f.data<T>();
        for (size_t i = 0; i < pb.size(); ++i) pb[i] += pg[i] * pf[i];
    });
}

// grad(x) += v at every element (broadcast of a scalar cotangent).
inline void accum_fill(Tape& t, const Tensor& x, double v) {
    const int32_t id = t.node_of(x);
    if (id < 0) return;
    Tensor& buf = t.grad_buf(id);
    dispatch(buf.dtype(), [&]<typename T>() {
        auto pb = buf.data<T>();
        const T vv = static_cast<T>(v);
        for (size_t i = 0; i < pb.size(); ++i) pb[i] += vv;
    });
}

// Full dot product, accumulated in double.
inline double dot_all(const Tensor& a, const Tensor& b) {
    return dispatch(a.dtype(), [&]<typename T>() {
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        double acc = 0.0;
        for (size_t i = 0; i < pa.size(); ++i) acc += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
        return acc;
    });
}

}  // namespace uhd::detail
