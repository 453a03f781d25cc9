#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "psta/tape.hpp"
#include "psta/tensor.hpp"

namespace psta {

namespace detail {

// C = A(m,k) * B(k,n); row-major, accumulating variant for backward use
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false) {
    if (!accumulate) std::fill(C, C + m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = A + i * k;
        T* crow = C + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const T a = arow[l];
            const T* brow = B + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C = A(m,p) * B(q,p)^T -> (m,q)
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t p, std::size_t q,
             bool accumulate = false) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = A + i * p;
        T* crow = C + i * q;
        for (std::size_t j = 0; j < q; ++j) {
            const T* brow = B + j * p;
            T acc = 0;
            for (std::size_t l = 0; l < p; ++l) acc += arow[l] * brow[l];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// C = A(p,m)^T * B(p,n) -> (m,n)
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t p, std::size_t m, std::size_t n,
             bool accumulate = false) {
    if (!accumulate) std::fill(C, C + m * n, T(0));
    for (std::size_t l = 0; l < p; ++l) {
        const T* arow = A + l * m;
        const T* brow = B + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T a = arow[i];
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

inline void validate_offsets(const std::vector<std::size_t>& offsets, std::size_t rows,
                             const char* op) {
    require(offsets.size() >= 2, std::string(op) + ": need at least one group");
    require(offsets.front() == 0 && offsets.back() == rows,
            std::string(op) + ": offsets must span [0," + std::to_string(rows) + ")");
    for (std::size_t g = 1; g < offsets.size(); ++g)
        require(offsets[g] > offsets[g - 1], std::string(op) + ": empty group");
}

// lane view of a 1-d/2-d tensor along `axis`: `lanes` slices of `len`
// elements, lane l starting at l*lane_stride, elements `step` apart
struct LaneView {
    std::size_t lanes, len, lane_stride, step;
};

template <typename T>
LaneView lanes_along(const Tensor<T>& x, std::size_t axis, const char* op) {
    if (x.ndim() == 1) {
        require(axis == 0, std::string(op) + ": axis out of range for 1-d input");
        return {1, x.dim(0), 0, 1};
    }
    require(x.ndim() == 2, std::string(op) + ": expects 1-d or 2-d input");
    require(axis <= 1, std::string(op) + ": axis out of range");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (axis == 0) return {n, m, 1, n};  // lanes are columns
    return {m, n, n, 1};                 // lanes are rows
}

template <typename T>
Shape reduced_shape(const Tensor<T>& x, std::size_t axis) {
    if (x.ndim() == 1) return {1};
    return axis == 0 ? Shape{x.dim(1)} : Shape{x.dim(0)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b, Tape<T>* tape = nullptr) {
    detail::require(a.shape() == b.shape(),
                    "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    check_finite(out, "add");
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            if (a.requires_grad()) {
                T* ga = a.grad();
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad();
                for (std::size_t i = 0; i < b.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b, Tape<T>* tape = nullptr) {
    detail::require(a.shape() == b.shape(),
                    "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    check_finite(out, "sub");
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            if (a.requires_grad()) {
                T* ga = a.grad();
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad();
                for (std::size_t i = 0; i < b.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b, Tape<T>* tape = nullptr) {
    detail::require(a.shape() == b.shape(),
                    "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    check_finite(out, "mul");
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            if (a.requires_grad()) {
                T* ga = a.grad();
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad();
                for (std::size_t i = 0; i < b.size(); ++i) gb[i] += g[i] * a.data()[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tensor<T> x, T c, Tape<T>* tape = nullptr) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = c * x.data()[i];
    check_finite(out, "scale");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, c]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += c * g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tensor<T> x, Tape<T>* tape = nullptr) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(T(0), x.data()[i]);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x.data()[i] > T(0)) gx[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b, Tape<T>* tape = nullptr) {
    detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                    "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n);
    check_finite(out, "matmul");
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            if (a.requires_grad()) detail::gemm_nt(g, b.data(), a.grad(), m, n, k, true);
            if (b.requires_grad()) detail::gemm_tn(a.data(), g, b.grad(), m, k, n, true);
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(Tensor<T> x, Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2, "transpose: expects 2-d input, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, m, n]() mutable {
            if (!out.has_grad()) return;
            T* gx = x.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += out.grad_if()[j * m + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(Tensor<T> x, Shape new_shape, Tape<T>* tape = nullptr) {
    detail::require(shape_numel(new_shape) == x.size(),
                    "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    Tensor<T> out(std::move(new_shape), x.vec());
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions (population convention for std: divide by n)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(Tensor<T> x, std::size_t axis, Tape<T>* tape = nullptr) {
    const auto lv = detail::lanes_along(x, axis, "softmax");
    Tensor<T> out(x.shape());
    for (std::size_t l = 0; l < lv.lanes; ++l) {
        const T* in = x.data() + l * lv.lane_stride;
        T* o = out.data() + l * lv.lane_stride;
        T mx = in[0];
        for (std::size_t i = 1; i < lv.len; ++i) mx = std::max(mx, in[i * lv.step]);
        double denom = 0.0;
        for (std::size_t i = 0; i < lv.len; ++i) {
            const T e = std::exp(in[i * lv.step] - mx);
            o[i * lv.step] = e;
            denom += static_cast<double>(e);
        }
        for (std::size_t i = 0; i < lv.len; ++i)
            o[i * lv.step] = static_cast<T>(static_cast<double>(o[i * lv.step]) / denom);
    }
    check_finite(out, "softmax");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, lv]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            const T* y = out.data();
            T* gx = x.grad();
            for (std::size_t l = 0; l < lv.lanes; ++l) {
                const std::size_t base = l * lv.lane_stride;
                double dot = 0.0;
                for (std::size_t i = 0; i < lv.len; ++i) {
                    const std::size_t p = base + i * lv.step;
                    dot += static_cast<double>(g[p]) * y[p];
                }
                for (std::size_t i = 0; i < lv.len; ++i) {
                    const std::size_t p = base + i * lv.step;
                    gx[p] += y[p] * (g[p] - static_cast<T>(dot));
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_mean(Tensor<T> x, std::size_t axis, Tape<T>* tape = nullptr) {
    const auto lv = detail::lanes_along(x, axis, "mean");
    detail::require(lv.len >= 1, "mean: empty axis");
    Tensor<T> out(detail::reduced_shape(x, axis));
    for (std::size_t l = 0; l < lv.lanes; ++l) {
        double acc = 0.0;
        for (std::size_t i = 0; i < lv.len; ++i)
            acc += static_cast<double>(x.data()[l * lv.lane_stride + i * lv.step]);
        out.data()[l] = static_cast<T>(acc / static_cast<double>(lv.len));
    }
    check_finite(out, "mean");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, lv]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            const T inv = T(1) / static_cast<T>(lv.len);
            for (std::size_t l = 0; l < lv.lanes; ++l)
                for (std::size_t i = 0; i < lv.len; ++i)
                    gx[l * lv.lane_stride + i * lv.step] += g[l] * inv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_std(Tensor<T> x, std::size_t axis, Tape<T>* tape = nullptr) {
    const auto lv = detail::lanes_along(x, axis, "std");
    detail::require(lv.len >= 1, "std: empty axis");
    Tensor<T> out(detail::reduced_shape(x, axis));
    for (std::size_t l = 0; l < lv.lanes; ++l) {
        double acc = 0.0;
        bool all_equal = true;
        const T first = x.data()[l * lv.lane_stride];
        for (std::size_t i = 0; i < lv.len; ++i) {
            const T v = x.data()[l * lv.lane_stride + i * lv.step];
            all_equal = all_equal && v == first;
            acc += static_cast<double>(v);
        }
        if (all_equal) {  // identical values have exactly zero spread
            out.data()[l] = T(0);
            continue;
        }
        const double mu = acc / static_cast<double>(lv.len);
        double ss = 0.0;
        for (std::size_t i = 0; i < lv.len; ++i) {
            const double d = static_cast<double>(x.data()[l * lv.lane_stride + i * lv.step]) - mu;
            ss += d * d;
        }
        out.data()[l] = static_cast<T>(std::sqrt(ss / static_cast<double>(lv.len)));
    }
    check_finite(out, "std");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, lv]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t l = 0; l < lv.lanes; ++l) {
                double acc = 0.0;
                for (std::size_t i = 0; i < lv.len; ++i)
                    acc += static_cast<double>(x.data()[l * lv.lane_stride + i * lv.step]);
                const double mu = acc / static_cast<double>(lv.len);
                const double s = static_cast<double>(out.data()[l]);
                if (s <= 0.0) continue;  // all-equal lane: zero subgradient
                const double coeff = static_cast<double>(g[l]) / (static_cast<double>(lv.len) * s);
                for (std::size_t i = 0; i < lv.len; ++i) {
                    const std::size_t p = l * lv.lane_stride + i * lv.step;
                    gx[p] += static_cast<T>(coeff * (static_cast<double>(x.data()[p]) - mu));
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_max(Tensor<T> x, std::size_t axis, Tape<T>* tape = nullptr) {
    const auto lv = detail::lanes_along(x, axis, "max");
    Tensor<T> out(detail::reduced_shape(x, axis));
    auto argmax = std::make_shared<std::vector<std::size_t>>(lv.lanes);
    for (std::size_t l = 0; l < lv.lanes; ++l) {
        std::size_t best = 0;
        T bv = x.data()[l * lv.lane_stride];
        for (std::size_t i = 1; i < lv.len; ++i) {
            const T v = x.data()[l * lv.lane_stride + i * lv.step];
            if (v > bv) {
                bv = v;
                best = i;
            }
        }
        out.data()[l] = bv;
        (*argmax)[l] = best;
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, lv, argmax]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t l = 0; l < lv.lanes; ++l)
                gx[l * lv.lane_stride + (*argmax)[l] * lv.step] += g[l];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(Tensor<T> x, Tape<T>* tape = nullptr) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x.data()[i]);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    check_finite(out, "sum");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const T g = out.grad_if()[0];
            T* gx = x.grad();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape surgery
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis, Tape<T>* tape = nullptr) {
    detail::require(!parts.empty(), "concat: no inputs");
    const std::size_t nd = parts[0].ndim();
    detail::require(nd >= 1 && nd <= 2 && axis < nd, "concat: bad axis for ndim");
    Shape out_shape = parts[0].shape();
    bool any_grad = parts[0].requires_grad();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        detail::require(parts[p].ndim() == nd, "concat: rank mismatch");
        for (std::size_t d = 0; d < nd; ++d)
            if (d != axis)
                detail::require(parts[p].dim(d) == out_shape[d],
                                "concat: shape mismatch at input " + std::to_string(p));
        out_shape[axis] += parts[p].dim(axis);
        any_grad = any_grad || parts[p].requires_grad();
    }
    Tensor<T> out(out_shape);
    if (nd == 1 || axis == 0) {
        std::size_t pos = 0;
        for (const auto& part : parts) {
            std::copy(part.data(), part.data() + part.size(), out.data() + pos);
            pos += part.size();
        }
    } else {  // 2-d, axis == 1
        const std::size_t rows = out_shape[0], out_cols = out_shape[1];
        std::size_t col0 = 0;
        for (const auto& part : parts) {
            const std::size_t pc = part.dim(1);
            for (std::size_t i = 0; i < rows; ++i)
                std::copy(part.data() + i * pc, part.data() + (i + 1) * pc,
                          out.data() + i * out_cols + col0);
            col0 += pc;
        }
    }
    if (tape && any_grad) {
        out.set_requires_grad(true);
        auto held = std::make_shared<std::vector<Tensor<T>>>(parts);
        tape->record([held, out, nd, axis]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            if (nd == 1 || axis == 0) {
                std::size_t pos = 0;
                for (auto& part : *held) {
                    if (part.requires_grad()) {
                        T* gp = part.grad();
                        for (std::size_t i = 0; i < part.size(); ++i) gp[i] += g[pos + i];
                    }
                    pos += part.size();
                }
            } else {
                const std::size_t rows = out.dim(0), out_cols = out.dim(1);
                std::size_t col0 = 0;
                for (auto& part : *held) {
                    const std::size_t pc = part.dim(1);
                    if (part.requires_grad()) {
                        T* gp = part.grad();
                        for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < pc; ++j)
                                gp[i * pc + j] += g[i * out_cols + col0 + j];
                    }
                    col0 += pc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(Tensor<T> x, std::size_t r0, std::size_t r1, Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2 && r0 < r1 && r1 <= x.dim(0),
                    "slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                        ") for " + shape_str(x.shape()));
    const std::size_t n = x.dim(1);
    Tensor<T> out({r1 - r0, n});
    std::copy(x.data() + r0 * n, x.data() + r1 * n, out.data());
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, r0, n]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t i = 0; i < out.size(); ++i) gx[r0 * n + i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(Tensor<T> x, std::size_t c0, std::size_t c1, Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2 && c0 < c1 && c1 <= x.dim(1),
                    "slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                        ") for " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1), w = c1 - c0;
    Tensor<T> out({m, w});
    for (std::size_t i = 0; i < m; ++i)
        std::copy(x.data() + i * n + c0, x.data() + i * n + c1, out.data() + i * w);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, c0, m, n, w]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// grouped ops over ragged row ranges. `offsets` has G+1 entries delimiting
// G contiguous row groups of a (R,F) matrix; groups are parcels or
// (parcel,date) cells, so sequences of different lengths batch without
// padding. Reductions accumulate in double so that results are stable under
// permutation of rows within a group.
// ---------------------------------------------------------------------------

/// per group g and feature f: [mean, std] over the group's rows -> (G, 2F)
template <typename T>
Tensor<T> segment_mean_std(Tensor<T> x, const std::vector<std::size_t>& offsets,
                           Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2, "segment_mean_std: expects 2-d input");
    detail::validate_offsets(offsets, x.dim(0), "segment_mean_std");
    const std::size_t G = offsets.size() - 1, F = x.dim(1);
    Tensor<T> out({G, 2 * F});
    std::vector<double> mu(F), ss(F);
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t r0 = offsets[g], r1 = offsets[g + 1];
        const double n = static_cast<double>(r1 - r0);
        std::fill(mu.begin(), mu.end(), 0.0);
        std::fill(ss.begin(), ss.end(), 0.0);
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t f = 0; f < F; ++f) mu[f] += static_cast<double>(x.at(r, f));
        for (std::size_t f = 0; f < F; ++f) mu[f] /= n;
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t f = 0; f < F; ++f) {
                const double d = static_cast<double>(x.at(r, f)) - mu[f];
                ss[f] += d * d;
            }
        for (std::size_t f = 0; f < F; ++f) {
            bool all_equal = true;
            for (std::size_t r = r0 + 1; r < r1 && all_equal; ++r)
                all_equal = x.at(r, f) == x.at(r0, f);
            out.at(g, f) = static_cast<T>(mu[f]);
            out.at(g, F + f) = all_equal ? T(0) : static_cast<T>(std::sqrt(ss[f] / n));
        }
    }
    check_finite(out, "segment_mean_std");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto offs = std::make_shared<std::vector<std::size_t>>(offsets);
        tape->record([x, out, offs, G, F]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            std::vector<double> mu(F);
            for (std::size_t gi = 0; gi < G; ++gi) {
                const std::size_t r0 = (*offs)[gi], r1 = (*offs)[gi + 1];
                const double n = static_cast<double>(r1 - r0);
                std::fill(mu.begin(), mu.end(), 0.0);
                for (std::size_t r = r0; r < r1; ++r)
                    for (std::size_t f = 0; f < F; ++f) mu[f] += static_cast<double>(x.at(r, f));
                for (std::size_t f = 0; f < F; ++f) mu[f] /= n;
                for (std::size_t f = 0; f < F; ++f) {
                    const double gm = static_cast<double>(g[gi * 2 * F + f]);
                    const double gs = static_cast<double>(g[gi * 2 * F + F + f]);
                    const double s = static_cast<double>(out.at(gi, F + f));
                    for (std::size_t r = r0; r < r1; ++r) {
                        double d = gm / n;
                        if (s > 0.0)
                            d += gs * (static_cast<double>(x.at(r, f)) - mu[f]) / (n * s);
                        gx[r * F + f] += static_cast<T>(d);
                    }
                }
            }
        });
    }
    return out;
}

/// per group: mean of rows -> (G, F)
template <typename T>
Tensor<T> group_mean(Tensor<T> x, const std::vector<std::size_t>& offsets,
                     Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2, "group_mean: expects 2-d input");
    detail::validate_offsets(offsets, x.dim(0), "group_mean");
    const std::size_t G = offsets.size() - 1, F = x.dim(1);
    Tensor<T> out({G, F});
    std::vector<double> acc(F);
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t r0 = offsets[g], r1 = offsets[g + 1];
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t f = 0; f < F; ++f) acc[f] += static_cast<double>(x.at(r, f));
        for (std::size_t f = 0; f < F; ++f)
            out.at(g, f) = static_cast<T>(acc[f] / static_cast<double>(r1 - r0));
    }
    check_finite(out, "group_mean");
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto offs = std::make_shared<std::vector<std::size_t>>(offsets);
        tape->record([x, out, offs, G, F]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t gi = 0; gi < G; ++gi) {
                const std::size_t r0 = (*offs)[gi], r1 = (*offs)[gi + 1];
                const T inv = T(1) / static_cast<T>(r1 - r0);
                for (std::size_t r = r0; r < r1; ++r)
                    for (std::size_t f = 0; f < F; ++f) gx[r * F + f] += g[gi * F + f] * inv;
            }
        });
    }
    return out;
}

/// per group: componentwise max of rows -> (G, F); ties keep the first row
template <typename T>
Tensor<T> group_max(Tensor<T> x, const std::vector<std::size_t>& offsets,
                    Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2, "group_max: expects 2-d input");
    detail::validate_offsets(offsets, x.dim(0), "group_max");
    const std::size_t G = offsets.size() - 1, F = x.dim(1);
    Tensor<T> out({G, F});
    auto arg = std::make_shared<std::vector<std::size_t>>(G * F);
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t r0 = offsets[g], r1 = offsets[g + 1];
        for (std::size_t f = 0; f < F; ++f) {
            std::size_t best = r0;
            T bv = x.at(r0, f);
            for (std::size_t r = r0 + 1; r < r1; ++r)
                if (x.at(r, f) > bv) {
                    bv = x.at(r, f);
                    best = r;
                }
            out.at(g, f) = bv;
            (*arg)[g * F + f] = best;
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record([x, out, arg, G, F]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t i = 0; i < G * F; ++i) {
                const std::size_t f = i % F;
                gx[(*arg)[i] * F + f] += g[i];
            }
        });
    }
    return out;
}

/// per group: last row -> (G, F)
template <typename T>
Tensor<T> group_last(Tensor<T> x, const std::vector<std::size_t>& offsets,
                     Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2, "group_last: expects 2-d input");
    detail::validate_offsets(offsets, x.dim(0), "group_last");
    const std::size_t G = offsets.size() - 1, F = x.dim(1);
    Tensor<T> out({G, F});
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t last = offsets[g + 1] - 1;
        std::copy(x.data() + last * F, x.data() + (last + 1) * F, out.data() + g * F);
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto offs = std::make_shared<std::vector<std::size_t>>(offsets);
        tape->record([x, out, offs, G, F]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gx = x.grad();
            for (std::size_t gi = 0; gi < G; ++gi) {
                const std::size_t last = (*offs)[gi + 1] - 1;
                for (std::size_t f = 0; f < F; ++f) gx[last * F + f] += g[gi * F + f];
            }
        });
    }
    return out;
}

/// per row r in group g: dot(x[r], q[g]) -> (R)
template <typename T>
Tensor<T> group_rowdot(Tensor<T> x, Tensor<T> q,
                       const std::vector<std::size_t>& offsets, Tape<T>* tape = nullptr) {
    detail::require(x.ndim() == 2 && q.ndim() == 2 && x.dim(1) == q.dim(1),
                    "group_rowdot: feature dims differ: " + shape_str(x.shape()) + " vs " +
                        shape_str(q.shape()));
    detail::validate_offsets(offsets, x.dim(0), "group_rowdot");
    detail::require(q.dim(0) == offsets.size() - 1, "group_rowdot: group count mismatch");
    const std::size_t G = offsets.size() - 1, F = x.dim(1);
    Tensor<T> out({x.dim(0)});
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) {
            double acc = 0.0;
            for (std::size_t f = 0; f < F; ++f)
                acc += static_cast<double>(x.at(r, f)) * static_cast<double>(q.at(g, f));
            out.at(r) = static_cast<T>(acc);
        }
    check_finite(out, "group_rowdot");
    if (tape && (x.requires_grad() || q.requires_grad())) {
        out.set_requires_grad(true);
        auto offs = std::make_shared<std::vector<std::size_t>>(offsets);
        tape->record([x, q, out, offs, G, F]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            for (std::size_t gi = 0; gi < G; ++gi)
                for (std::size_t r = (*offs)[gi]; r < (*offs)[gi + 1]; ++r) {
                    if (x.requires_grad()) {
                        T* gx = x.grad();
                        for (std::size_t f = 0; f < F; ++f) gx[r * F + f] += g[r] * q.at(gi, f);
                    }
                    if (q.requires_grad()) {
                        T* gq = q.grad();
                        for (std::size_t f = 0; f < F; ++f) gq[gi * F + f] += g[r] * x.at(r, f);
                    }
                }
        });
    }
    return out;
}

/// softmax within each group of a 1-d logit vector
template <typename T>
Tensor<T> group_softmax(Tensor<T> z, const std::vector<std::size_t>& offsets,
                        Tape<T>* tape = nullptr) {
    detail::require(z.ndim() == 1, "group_softmax: expects 1-d input");
    detail::validate_offsets(offsets, z.dim(0), "group_softmax");
    const std::size_t G = offsets.size() - 1;
    Tensor<T> out(z.shape());
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t r0 = offsets[g], r1 = offsets[g + 1];
        T mx = z.at(r0);
        for (std::size_t r = r0 + 1; r < r1; ++r) mx = std::max(mx, z.at(r));
        double denom = 0.0;
        for (std::size_t r = r0; r < r1; ++r) {
            const T e = std::exp(z.at(r) - mx);
            out.at(r) = e;
            denom += static_cast<double>(e);
        }
        for (std::size_t r = r0; r < r1; ++r)
            out.at(r) = static_cast<T>(static_cast<double>(out.at(r)) / denom);
    }
    check_finite(out, "group_softmax");
    if (tape && z.requires_grad()) {
        out.set_requires_grad(true);
        auto offs = std::make_shared<std::vector<std::size_t>>(offsets);
        tape->record([z, out, offs, G]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            T* gz = z.grad();
            for (std::size_t gi = 0; gi < G; ++gi) {
                const std::size_t r0 = (*offs)[gi], r1 = (*offs)[gi + 1];
                double dot = 0.0;
                for (std::size_t r = r0; r < r1; ++r)
                    dot += static_cast<double>(g[r]) * out.at(r);
                for (std::size_t r = r0; r < r1; ++r)
                    gz[r] += out.at(r) * (g[r] - static_cast<T>(dot));
            }
        });
    }
    return out;
}

/// per group: sum of rows of `v` weighted by scalar weights `w` -> (G, F)
template <typename T>
Tensor<T> group_weighted_sum(Tensor<T> v, Tensor<T> w,
                             const std::vector<std::size_t>& offsets, Tape<T>* tape = nullptr) {
    detail::require(v.ndim() == 2 && w.ndim() == 1 && w.dim(0) == v.dim(0),
                    "group_weighted_sum: need (R,F) values and (R) weights");
    detail::validate_offsets(offsets, v.dim(0), "group_weighted_sum");
    const std::size_t G = offsets.size() - 1, F = v.dim(1);
    Tensor<T> out({G, F});
    std::vector<double> acc(F);
    for (std::size_t g = 0; g < G; ++g) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) {
            const double wr = static_cast<double>(w.at(r));
            for (std::size_t f = 0; f < F; ++f)
                acc[f] += wr * static_cast<double>(v.at(r, f));
        }
        for (std::size_t f = 0; f < F; ++f) out.at(g, f) = static_cast<T>(acc[f]);
    }
    check_finite(out, "group_weighted_sum");
    if (tape && (v.requires_grad() || w.requires_grad())) {
        out.set_requires_grad(true);
        auto offs = std::make_shared<std::vector<std::size_t>>(offsets);
        tape->record([v, w, out, offs, G, F]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_if();
            for (std::size_t gi = 0; gi < G; ++gi)
                for (std::size_t r = (*offs)[gi]; r < (*offs)[gi + 1]; ++r) {
                    if (v.requires_grad()) {
                        T* gv = v.grad();
                        for (std::size_t f = 0; f < F; ++f)
                            gv[r * F + f] += w.at(r) * g[gi * F + f];
                    }
                    if (w.requires_grad()) {
                        double acc = 0.0;
                        for (std::size_t f = 0; f < F; ++f)
                            acc += static_cast<double>(v.at(r, f)) *
                                   static_cast<double>(g[gi * F + f]);
                        w.grad()[r] += static_cast<T>(acc);
                    }
                }
        });
    }
    return out;
}

}  // namespace psta
