#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tridistill/rng.hpp"
#include "tridistill/tensor.hpp"

namespace tridistill {

// Reverse-mode autodiff over a dynamically built DAG. Each op allocates one
// node whose closure accumulates into the parents' grads. Graphs are built
// per step and dropped after backward(); parameters are long-lived leaves.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node*)> back;

    explicit Node(Tensor<T> v) : value(std::move(v)) {}

    Tensor<T>& g() {
        if (!grad_alloc) {
            grad = Tensor<T>::zeros(value.shape);
            grad_alloc = true;
        }
        return grad;
    }

    void zero_grad() {
        if (grad_alloc) std::fill(grad.data.begin(), grad.data.end(), T(0));
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
    return std::make_shared<Node<T>>(std::move(v));
}

template <typename T>
Var<T> parameter(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>(std::move(v));
    n->needs_grad = true;
    return n;
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> v, std::vector<Var<T>> parents, std::function<void(Node<T>*)> back) {
    auto n = std::make_shared<Node<T>>(std::move(v));
    for (const auto& p : parents)
        if (p->needs_grad) n->needs_grad = true;
    if (n->needs_grad) {
        n->parents = std::move(parents);
        n->back = std::move(back);
    }
    return n;
}

inline void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

} // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>* self) {
        const auto& g = self->grad.data;
        if (a->needs_grad) {
            auto& da = a->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (b->needs_grad) {
            auto& db = b->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b->value.data[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>* self) {
        const auto& g = self->grad.data;
        if (a->needs_grad) {
            auto& da = a->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (b->needs_grad) {
            auto& db = b->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b->value.data[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>* self) {
        const auto& g = self->grad.data;
        if (a->needs_grad) {
            auto& da = a->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b->value.data[i];
        }
        if (b->needs_grad) {
            auto& db = b->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a->value.data[i];
        }
    });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.same_shape(b->value), "div: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= b->value.data[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>* self) {
        const auto& g = self->grad.data;
        const auto& y = self->value.data;
        if (a->needs_grad) {
            auto& da = a->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / b->value.data[i];
        }
        if (b->needs_grad) {
            auto& db = b->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i] * y[i] / b->value.data[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(v * c);
    return detail::make_op<T>(std::move(out), {a}, [a, c](Node<T>* self) {
        const auto& g = self->grad.data;
        auto& da = a->g().data;
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += static_cast<T>(g[i] * c);
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double c) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = static_cast<T>(v + c);
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>* self) {
        const auto& g = self->grad.data;
        auto& da = a->g().data;
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
}

// Broadcast-add a length-C vector over every length-C row of a.
template <typename T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& b) {
    const int c = a->value.shape.back();
    detail::check(b->value.ndim() == 1 && b->value.dim(0) == c, "add_rowvec: vector mismatch");
    Tensor<T> out = a->value;
    const std::size_t rows = out.size() / static_cast<std::size_t>(c);
    for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) out.data[r * c + j] += b->value.data[j];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, c, rows](Node<T>* self) {
        const auto& g = self->grad.data;
        if (a->needs_grad) {
            auto& da = a->g().data;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (b->needs_grad) {
            auto& db = b->g().data;
            for (int j = 0; j < c; ++j) {
                double s = 0;
                for (std::size_t r = 0; r < rows; ++r) s += static_cast<double>(g[r * c + j]);
                db[j] += static_cast<T>(s);
            }
        }
    });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.ndim() == 2 && b->value.ndim() == 2 && a->value.dim(1) == b->value.dim(0),
                  "matmul: shape mismatch");
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int t = 0; t < k; ++t)
                s += static_cast<double>(a->value.at2(i, t)) * static_cast<double>(b->value.at2(t, j));
            out.at2(i, j) = static_cast<T>(s);
        }
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>* self) {
        // da += g * b^T, db += a^T * g
        if (a->needs_grad) {
            auto& da = a->g();
            for (int i = 0; i < m; ++i)
                for (int t = 0; t < k; ++t) {
                    double s = 0;
                    for (int j = 0; j < n; ++j)
                        s += static_cast<double>(self->grad.at2(i, j)) * static_cast<double>(b->value.at2(t, j));
                    da.at2(i, t) += static_cast<T>(s);
                }
        }
        if (b->needs_grad) {
            auto& db = b->g();
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < n; ++j) {
                    double s = 0;
                    for (int i = 0; i < m; ++i)
                        s += static_cast<double>(a->value.at2(i, t)) * static_cast<double>(self->grad.at2(i, j));
                    db.at2(t, j) += static_cast<T>(s);
                }
        }
    });
}

// a (M,K) times b (N,K) transposed: out (M,N). Matches linear layers whose
// weight is stored (out_features, in_features).
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.ndim() == 2 && b->value.ndim() == 2 && a->value.dim(1) == b->value.dim(1),
                  "matmul_nt: shape mismatch");
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(0);
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int t = 0; t < k; ++t)
                s += static_cast<double>(a->value.at2(i, t)) * static_cast<double>(b->value.at2(j, t));
            out.at2(i, j) = static_cast<T>(s);
        }
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>* self) {
        // da += g * b, db += g^T * a
        if (a->needs_grad) {
            auto& da = a->g();
            for (int i = 0; i < m; ++i)
                for (int t = 0; t < k; ++t) {
                    double s = 0;
                    for (int j = 0; j < n; ++j)
                        s += static_cast<double>(self->grad.at2(i, j)) * static_cast<double>(b->value.at2(j, t));
                    da.at2(i, t) += static_cast<T>(s);
                }
        }
        if (b->needs_grad) {
            auto& db = b->g();
            for (int j = 0; j < n; ++j)
                for (int t = 0; t < k; ++t) {
                    double s = 0;
                    for (int i = 0; i < m; ++i)
                        s += static_cast<double>(self->grad.at2(i, j)) * static_cast<double>(a->value.at2(i, t));
                    db.at2(j, t) += static_cast<T>(s);
                }
        }
    });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.ndim() == 3 && b->value.ndim() == 3 && a->value.dim(0) == b->value.dim(0) &&
                      a->value.dim(2) == b->value.dim(1),
                  "bmm: shape mismatch");
    const int bs = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n = b->value.dim(2);
    Tensor<T> out({bs, m, n});
    for (int q = 0; q < bs; ++q)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0;
                for (int t = 0; t < k; ++t)
                    s += static_cast<double>(a->value.at3(q, i, t)) * static_cast<double>(b->value.at3(q, t, j));
                out.at3(q, i, j) = static_cast<T>(s);
            }
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, bs, m, k, n](Node<T>* self) {
        if (a->needs_grad) {
            auto& da = a->g();
            for (int q = 0; q < bs; ++q)
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double s = 0;
                        for (int j = 0; j < n; ++j)
                            s += static_cast<double>(self->grad.at3(q, i, j)) *
                                 static_cast<double>(b->value.at3(q, t, j));
                        da.at3(q, i, t) += static_cast<T>(s);
                    }
        }
        if (b->needs_grad) {
            auto& db = b->g();
            for (int q = 0; q < bs; ++q)
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < n; ++j) {
                        double s = 0;
                        for (int i = 0; i < m; ++i)
                            s += static_cast<double>(a->value.at3(q, i, t)) *
                                 static_cast<double>(self->grad.at3(q, i, j));
                        db.at3(q, t, j) += static_cast<T>(s);
                    }
        }
    });
}

// Batched a (B,M,K) times b (B,N,K) transposed: out (B,M,N).
template <typename T>
Var<T> bmm_nt(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.ndim() == 3 && b->value.ndim() == 3 && a->value.dim(0) == b->value.dim(0) &&
                      a->value.dim(2) == b->value.dim(2),
                  "bmm_nt: shape mismatch");
    const int bs = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n = b->value.dim(1);
    Tensor<T> out({bs, m, n});
    for (int q = 0; q < bs; ++q)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0;
                for (int t = 0; t < k; ++t)
                    s += static_cast<double>(a->value.at3(q, i, t)) * static_cast<double>(b->value.at3(q, j, t));
                out.at3(q, i, j) = static_cast<T>(s);
            }
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, bs, m, k, n](Node<T>* self) {
        if (a->needs_grad) {
            auto& da = a->g();
            for (int q = 0; q < bs; ++q)
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double s = 0;
                        for (int j = 0; j < n; ++j)
                            s += static_cast<double>(self->grad.at3(q, i, j)) *
                                 static_cast<double>(b->value.at3(q, j, t));
                        da.at3(q, i, t) += static_cast<T>(s);
                    }
        }
        if (b->needs_grad) {
            auto& db = b->g();
            for (int q = 0; q < bs; ++q)
                for (int j = 0; j < n; ++j)
                    for (int t = 0; t < k; ++t) {
                        double s = 0;
                        for (int i = 0; i < m; ++i)
                            s += static_cast<double>(self->grad.at3(q, i, j)) *
                                 static_cast<double>(a->value.at3(q, i, t));
                        db.at3(q, j, t) += static_cast<T>(s);
                    }
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
    detail::check(Tensor<T>::numel(shape) == a->value.size(), "reshape: size mismatch");
    Tensor<T> out(std::move(shape), a->value.data);
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>* self) {
        auto& da = a->g().data;
        const auto& g = self->grad.data;
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
}

// (d0,d1,d2,d3) -> (d0,d2,d1,d3); self-inverse, used for attention head split.
template <typename T>
Var<T> transpose_0213(const Var<T>& a) {
    detail::check(a->value.ndim() == 4, "transpose_0213: want 4-d");
    const int d0 = a->value.dim(0), d1 = a->value.dim(1), d2 = a->value.dim(2), d3 = a->value.dim(3);
    Tensor<T> out({d0, d2, d1, d3});
    for (int i = 0; i < d0; ++i)
        for (int j = 0; j < d1; ++j)
            for (int k = 0; k < d2; ++k)
                for (int l = 0; l < d3; ++l)
                    out.data[((static_cast<std::size_t>(i) * d2 + k) * d1 + j) * d3 + l] =
                        a->value.data[((static_cast<std::size_t>(i) * d1 + j) * d2 + k) * d3 + l];
    return detail::make_op<T>(std::move(out), {a}, [a, d0, d1, d2, d3](Node<T>* self) {
        auto& da = a->g();
        for (int i = 0; i < d0; ++i)
            for (int j = 0; j < d1; ++j)
                for (int k = 0; k < d2; ++k)
                    for (int l = 0; l < d3; ++l)
                        da.data[((static_cast<std::size_t>(i) * d1 + j) * d2 + k) * d3 + l] +=
                            self->grad.data[((static_cast<std::size_t>(i) * d2 + k) * d1 + j) * d3 + l];
    });
}

// Gather rows of a 2-d tensor; duplicate indices are allowed and their grads
// scatter-add back into the same row.
template <typename T>
Var<T> rows(const Var<T>& a, std::vector<int> idx) {
    detail::check(a->value.ndim() == 2, "rows: want 2-d");
    const int c = a->value.dim(1);
    Tensor<T> out({static_cast<int>(idx.size()), c});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        detail::check(idx[i] >= 0 && idx[i] < a->value.dim(0), "rows: index out of range");
        std::copy_n(a->value.data.begin() + static_cast<std::size_t>(idx[i]) * c, c,
                    out.data.begin() + i * c);
    }
    return detail::make_op<T>(std::move(out), {a}, [a, idx = std::move(idx), c](Node<T>* self) {
        auto& da = a->g();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < c; ++j)
                da.data[static_cast<std::size_t>(idx[i]) * c + j] += self->grad.data[i * c + j];
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5) {
    const int c = x->value.shape.back();
    detail::check(gamma->value.ndim() == 1 && gamma->value.dim(0) == c && beta->value.same_shape(gamma->value),
                  "layer_norm: affine mismatch");
    const std::size_t rows = x->value.size() / static_cast<std::size_t>(c);
    Tensor<T> out(x->value.shape);
    std::vector<double> xhat(x->value.size()), inv_sigma(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* px = x->value.data.data() + r * c;
        double m = 0;
        for (int j = 0; j < c; ++j) m += static_cast<double>(px[j]);
        m /= c;
        double v = 0;
        for (int j = 0; j < c; ++j) {
            const double d = static_cast<double>(px[j]) - m;
            v += d * d;
        }
        v /= c;
        const double is = 1.0 / std::sqrt(v + eps);
        inv_sigma[r] = is;
        for (int j = 0; j < c; ++j) {
            const double xh = (static_cast<double>(px[j]) - m) * is;
            xhat[r * c + j] = xh;
            out.data[r * c + j] =
                static_cast<T>(xh * static_cast<double>(gamma->value.data[j]) + static_cast<double>(beta->value.data[j]));
        }
    }
    return detail::make_op<T>(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, c, rows, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node<T>* self) {
            // dx = (u - mean(u) - xhat * mean(u*xhat)) / sigma, u = g*gamma
            for (std::size_t r = 0; r < rows; ++r) {
                const T* pg = self->grad.data.data() + r * c;
                double m1 = 0, m2 = 0;
                std::vector<double> u(static_cast<std::size_t>(c));
                for (int j = 0; j < c; ++j) {
                    u[j] = static_cast<double>(pg[j]) * static_cast<double>(gamma->value.data[j]);
                    m1 += u[j];
                    m2 += u[j] * xhat[r * c + j];
                }
                m1 /= c;
                m2 /= c;
                if (x->needs_grad) {
                    auto& dx = x->g();
                    for (int j = 0; j < c; ++j)
                        dx.data[r * c + j] +=
                            static_cast<T>((u[j] - m1 - xhat[r * c + j] * m2) * inv_sigma[r]);
                }
                if (gamma->needs_grad) {
                    auto& dg = gamma->g();
                    for (int j = 0; j < c; ++j)
                        dg.data[j] += static_cast<T>(static_cast<double>(pg[j]) * xhat[r * c + j]);
                }
                if (beta->needs_grad) {
                    auto& db = beta->g();
                    for (int j = 0; j < c; ++j) db.data[j] += pg[j];
                }
            }
        });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a) {
    const int c = a->value.shape.back();
    const std::size_t rows = a->value.size() / static_cast<std::size_t>(c);
    Tensor<T> out(a->value.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* px = a->value.data.data() + r * c;
        double mx = static_cast<double>(px[0]);
        for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(px[j]));
        double z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(px[j]) - mx);
        for (int j = 0; j < c; ++j)
            out.data[r * c + j] = static_cast<T>(std::exp(static_cast<double>(px[j]) - mx) / z);
    }
    return detail::make_op<T>(std::move(out), {a}, [a, c, rows](Node<T>* self) {
        // dx = y * (g - sum(g*y))
        auto& da = a->g();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* py = self->value.data.data() + r * c;
            const T* pg = self->grad.data.data() + r * c;
            double s = 0;
            for (int j = 0; j < c; ++j) s += static_cast<double>(pg[j]) * static_cast<double>(py[j]);
            for (int j = 0; j < c; ++j)
                da.data[r * c + j] +=
                    static_cast<T>(static_cast<double>(py[j]) * (static_cast<double>(pg[j]) - s));
        }
    });
}

template <typename T>
Var<T> log_softmax_lastdim(const Var<T>& a) {
    const int c = a->value.shape.back();
    const std::size_t rows = a->value.size() / static_cast<std::size_t>(c);
    Tensor<T> out(a->value.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* px = a->value.data.data() + r * c;
        double mx = static_cast<double>(px[0]);
        for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(px[j]));
        double z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(px[j]) - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) out.data[r * c + j] = static_cast<T>(static_cast<double>(px[j]) - lse);
    }
    return detail::make_op<T>(std::move(out), {a}, [a, c, rows](Node<T>* self) {
        // dx = g - softmax * sum(g)
        auto& da = a->g();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* py = self->value.data.data() + r * c;
            const T* pg = self->grad.data.data() + r * c;
            double s = 0;
            for (int j = 0; j < c; ++j) s += static_cast<double>(pg[j]);
            for (int j = 0; j < c; ++j)
                da.data[r * c + j] += static_cast<T>(static_cast<double>(pg[j]) -
                                                     std::exp(static_cast<double>(py[j])) * s);
        }
    });
}

// Exact-erf GELU; smooth everywhere, which keeps finite-difference checks tight.
template <typename T>
Var<T> gelu(const Var<T>& a) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(a->value.data[i]);
        out.data[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
    }
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>* self) {
        auto& da = a->g().data;
        const auto& g = self->grad.data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = static_cast<double>(a->value.data[i]);
            const double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
            da[i] += static_cast<T>(static_cast<double>(g[i]) * d);
        }
    });
}

// sqrt(x + eps); eps keeps the gradient finite at x == 0.
template <typename T>
Var<T> sqrt_eps(const Var<T>& a, double eps) {
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = static_cast<T>(std::sqrt(static_cast<double>(a->value.data[i]) + eps));
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>* self) {
        auto& da = a->g().data;
        const auto& g = self->grad.data;
        const auto& y = self->value.data;
        for (std::size_t i = 0; i < g.size(); ++i)
            da[i] += static_cast<T>(static_cast<double>(g[i]) / (2.0 * static_cast<double>(y[i])));
    });
}

// Elementwise max(x, c); gradient passes only where x > c.
template <typename T>
Var<T> max_scalar(const Var<T>& a, double c) {
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = static_cast<T>(std::max(static_cast<double>(a->value.data[i]), c));
    return detail::make_op<T>(std::move(out), {a}, [a, c](Node<T>* self) {
        auto& da = a->g().data;
        const auto& g = self->grad.data;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (static_cast<double>(a->value.data[i]) > c) da[i] += g[i];
    });
}

// Per-row dot product of two (N,C) tensors -> (N,). rowwise_dot(a, a) yields
// squared row norms with the correct doubled gradient.
template <typename T>
Var<T> rowwise_dot(const Var<T>& a, const Var<T>& b) {
    detail::check(a->value.ndim() == 2 && a->value.same_shape(b->value), "rowwise_dot: shape mismatch");
    const int n = a->value.dim(0), c = a->value.dim(1);
    Tensor<T> out({n});
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < c; ++j)
            s += static_cast<double>(a->value.at2(i, j)) * static_cast<double>(b->value.at2(i, j));
        out.data[static_cast<std::size_t>(i)] = static_cast<T>(s);
    }
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, n, c](Node<T>* self) {
        const auto& g = self->grad.data;
        for (int i = 0; i < n; ++i) {
            const T gi = g[static_cast<std::size_t>(i)];
            if (a->needs_grad) {
                auto& da = a->g();
                for (int j = 0; j < c; ++j) da.at2(i, j) += gi * b->value.at2(i, j);
            }
            if (b->needs_grad) {
                auto& db = b->g();
                for (int j = 0; j < c; ++j) db.at2(i, j) += gi * a->value.at2(i, j);
            }
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    double s = 0;
    for (T v : a->value.data) s += static_cast<double>(v);
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(s);
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>* self) {
        const T g = self->grad.data[0];
        auto& da = a->g().data;
        for (auto& v : da) v += g;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    detail::check(a->value.size() > 0, "mean: empty");
    const double n = static_cast<double>(a->value.size());
    double s = 0;
    for (T v : a->value.data) s += static_cast<double>(v);
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(s / n);
    return detail::make_op<T>(std::move(out), {a}, [a, n](Node<T>* self) {
        const double g = static_cast<double>(self->grad.data[0]) / n;
        auto& da = a->g().data;
        for (auto& v : da) v += static_cast<T>(g);
    });
}

// Mean negative log-likelihood of hard targets over (N,K) log-probabilities.
template <typename T>
Var<T> nll(const Var<T>& logp, std::vector<int> targets) {
    detail::check(logp->value.ndim() == 2 &&
                      static_cast<std::size_t>(logp->value.dim(0)) == targets.size(),
                  "nll: target count mismatch");
    const int n = logp->value.dim(0);
    double s = 0;
    for (int i = 0; i < n; ++i) {
        detail::check(targets[static_cast<std::size_t>(i)] >= 0 &&
                          targets[static_cast<std::size_t>(i)] < logp->value.dim(1),
                      "nll: target out of range");
        s -= static_cast<double>(logp->value.at2(i, targets[static_cast<std::size_t>(i)]));
    }
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(s / n);
    return detail::make_op<T>(std::move(out), {logp}, [logp, targets = std::move(targets), n](Node<T>* self) {
        const double g = static_cast<double>(self->grad.data[0]) / n;
        auto& d = logp->g();
        for (int i = 0; i < n; ++i) d.at2(i, targets[static_cast<std::size_t>(i)]) -= static_cast<T>(g);
    });
}

// Mean soft cross-entropy -1/N sum_i sum_k q[i,k] * logp[i,k]; q is a fixed
// probability table, not part of the graph.
template <typename T>
Var<T> soft_nll(const Var<T>& logp, Tensor<T> q) {
    detail::check(logp->value.same_shape(q), "soft_nll: shape mismatch");
    const int n = logp->value.dim(0);
    double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i)
        s -= static_cast<double>(q.data[i]) * static_cast<double>(logp->value.data[i]);
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(s / n);
    return detail::make_op<T>(std::move(out), {logp}, [logp, q = std::move(q), n](Node<T>* self) {
        const double g = static_cast<double>(self->grad.data[0]) / n;
        auto& d = logp->g().data;
        for (std::size_t i = 0; i < q.size(); ++i) d[i] -= static_cast<T>(g * static_cast<double>(q.data[i]));
    });
}

// Inverted dropout. Consumes one uniform draw per element in row-major order;
// an element is kept when draw >= p. p <= 0 returns the input unchanged and
// consumes nothing.
template <typename T>
Var<T> dropout(const Var<T>& a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    detail::check(p < 1.0, "dropout: p must be < 1");
    const double inv_keep = 1.0 / (1.0 - p);
    std::vector<uint8_t> mask(a->value.size());
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform01() >= p ? 1 : 0;
        out.data[i] = mask[i] ? static_cast<T>(static_cast<double>(a->value.data[i]) * inv_keep) : T(0);
    }
    return detail::make_op<T>(std::move(out), {a}, [a, mask = std::move(mask), inv_keep](Node<T>* self) {
        auto& da = a->g().data;
        const auto& g = self->grad.data;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (mask[i]) da[i] += static_cast<T>(static_cast<double>(g[i]) * inv_keep);
    });
}

// Reverse-topological sweep from a scalar root. Seeds d(root)/d(root) = 1.
template <typename T>
void backward(const Var<T>& root) {
    detail::check(root->value.size() == 1, "backward: root must be scalar");
    if (!root->needs_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->g().data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->back) (*it)->back(*it);
}

} // namespace tridistill
