#include "fedfa/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedfa {

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, std::string_view op) {
    if (backward_done_) throw std::logic_error("tape: cannot record after backward");
    if (check_finite_ && !value.all_finite()) {
        throw std::runtime_error("non-finite value produced by " + std::string(op.empty() ? "op" : op));
    }
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    for (Var v : inputs) {
        const Node& in = node(v);
        n.inputs.push_back(v.id);
        n.requires_grad = n.requires_grad || in.requires_grad;
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable");
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

std::span<const double> Tape::grad(Var v) const {
    if (!backward_done_) throw std::logic_error("tape: gradients requested before backward");
    const Node& n = node(v);
    if (n.grad.empty()) {
        static thread_local std::vector<double> zeros;
        zeros.assign(n.value.size(), 0.0);
        return zeros;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    if (nodes_.empty()) throw std::logic_error("tape: backward called before any forward computation");
    if (backward_done_) throw std::logic_error("tape: backward already run");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
        throw std::invalid_argument("tape: loss must be a scalar, got shape " + shape_str(root.value.shape()));
    }
    backward_done_ = true;
    root.grad.assign(1, 1.0);
    std::vector<std::vector<double>*> grad_in;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.backward || !n.requires_grad) continue;
        grad_in.clear();
        for (std::size_t in : n.inputs) {
            Node& src = nodes_[in];
            if (!src.requires_grad) {
                grad_in.push_back(nullptr);
                continue;
            }
            if (src.grad.empty()) src.grad.assign(src.value.size(), 0.0);
            grad_in.push_back(&src.grad);
        }
        n.backward(n.grad, grad_in);
    }
}

namespace ops {

namespace {

std::string label_of(std::string_view label) { return std::string(label); }

}  // namespace

Var conv2d(Tape& tape, Var x, Var weight, Var bias, std::size_t stride, std::size_t padding,
           std::string_view label) {
    const Tensor& X = tape.value(x);
    const Tensor& Wt = tape.value(weight);
    const Tensor& Bs = tape.value(bias);
    if (X.rank() != 4) {
        throw std::invalid_argument(label_of(label) + ": expected input [B,C,H,W], got " + shape_str(X.shape()));
    }
    if (Wt.rank() != 4 || Wt.dim(2) != Wt.dim(3)) {
        throw std::invalid_argument(label_of(label) + ": expected square kernel [Co,Ci,K,K], got " +
                                    shape_str(Wt.shape()));
    }
    if (stride == 0) throw std::invalid_argument(label_of(label) + ": stride must be positive");
    const std::size_t B = X.dim(0), Ci = X.dim(1), H = X.dim(2), W = X.dim(3);
    const std::size_t Co = Wt.dim(0), K = Wt.dim(2);
    if (Wt.dim(1) != Ci) {
        throw std::invalid_argument(label_of(label) + ": expected input channels " + std::to_string(Wt.dim(1)) +
                                    ", got " + std::to_string(Ci) + " (input shape " + shape_str(X.shape()) + ")");
    }
    require_shape(Bs, Shape{Co}, label_of(label) + " bias");
    if (H + 2 * padding < K || W + 2 * padding < K) {
        throw std::invalid_argument(label_of(label) + ": kernel " + std::to_string(K) + " larger than padded input " +
                                    shape_str(X.shape()));
    }
    const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - K) / stride + 1;

    // Output rows i for which i*stride + k - padding lies in [0, n).
    auto valid_range = [stride, padding](std::size_t k, std::size_t n, std::size_t out_n) {
        const long s = static_cast<long>(stride), p = static_cast<long>(padding), kk = static_cast<long>(k);
        long lo = p - kk <= 0 ? 0 : (p - kk + s - 1) / s;
        long hi = (static_cast<long>(n) - 1 + p - kk);
        hi = hi < 0 ? -1 : hi / s;
        hi = std::min(hi, static_cast<long>(out_n) - 1);
        return std::pair<long, long>{lo, hi};
    };

    const long sl = static_cast<long>(stride), pl = static_cast<long>(padding), Wl = static_cast<long>(W);

    Tensor out(Shape{B, Co, Ho, Wo});
    const double* xd = X.data().data();
    const double* wd = Wt.data().data();
    double* od = out.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < Co; ++o) {
            double* op = od + (b * Co + o) * Ho * Wo;
            std::fill(op, op + Ho * Wo, Bs[o]);
            for (std::size_t c = 0; c < Ci; ++c) {
                const double* xp = xd + (b * Ci + c) * H * W;
                for (std::size_t ki = 0; ki < K; ++ki) {
                    auto [ilo, ihi] = valid_range(ki, H, Ho);
                    for (std::size_t kj = 0; kj < K; ++kj) {
                        auto [jlo, jhi] = valid_range(kj, W, Wo);
                        const double wv = wd[((o * Ci + c) * K + ki) * K + kj];
                        for (long i = ilo; i <= ihi; ++i) {
                            const long row = (i * sl + static_cast<long>(ki) - pl) * Wl + static_cast<long>(kj) - pl;
                            double* orow = op + i * static_cast<long>(Wo);
                            for (long j = jlo; j <= jhi; ++j) orow[j] += wv * xp[row + j * sl];
                        }
                    }
                }
            }
        }
    }

    auto backward = [=, &tape](std::span<const double> g, std::span<std::vector<double>*> gin) {
        const double* xd = tape.value(x).data().data();
        const double* wd = tape.value(weight).data().data();
        double* gx = gin[0] ? gin[0]->data() : nullptr;
        double* gw = gin[1] ? gin[1]->data() : nullptr;
        double* gb = gin[2] ? gin[2]->data() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < Co; ++o) {
                const double* gp = g.data() + (b * Co + o) * Ho * Wo;
                if (gb) {
                    double s = 0.0;
                    for (std::size_t t = 0; t < Ho * Wo; ++t) s += gp[t];
                    gb[o] += s;
                }
                for (std::size_t c = 0; c < Ci; ++c) {
                    const double* xp = xd + (b * Ci + c) * H * W;
                    double* gxp = gx ? gx + (b * Ci + c) * H * W : nullptr;
                    for (std::size_t ki = 0; ki < K; ++ki) {
                        auto [ilo, ihi] = valid_range(ki, H, Ho);
                        for (std::size_t kj = 0; kj < K; ++kj) {
                            auto [jlo, jhi] = valid_range(kj, W, Wo);
                            const std::size_t widx = ((o * Ci + c) * K + ki) * K + kj;
                            const double wv = wd[widx];
                            double acc = 0.0;
                            for (long i = ilo; i <= ihi; ++i) {
                                const long row = (i * sl + static_cast<long>(ki) - pl) * Wl + static_cast<long>(kj) - pl;
                                const double* grow = gp + i * static_cast<long>(Wo);
                                for (long j = jlo; j <= jhi; ++j) {
                                    acc += grow[j] * xp[row + j * sl];
                                    if (gxp) gxp[row + j * sl] += wv * grow[j];
                                }
                            }
                            if (gw) gw[widx] += acc;
                        }
                    }
                }
            }
        }
    };
    return tape.record(std::move(out), {x, weight, bias}, backward, label);
}

Var linear(Tape& tape, Var x, Var weight, Var bias, std::string_view label) {
    const Tensor& X = tape.value(x);
    const Tensor& Wt = tape.value(weight);
    if (X.rank() != 2 || Wt.rank() != 2 || Wt.dim(1) != X.dim(1)) {
        throw std::invalid_argument(label_of(label) + ": expected input [B," +
                                    (Wt.rank() == 2 ? std::to_string(Wt.dim(1)) : std::string("?")) + "], got " +
                                    shape_str(X.shape()));
    }
    const std::size_t B = X.dim(0), F = X.dim(1), O = Wt.dim(0);
    require_shape(tape.value(bias), Shape{O}, label_of(label) + " bias");
    Tensor out(Shape{B, O});
    const Tensor& Bs = tape.value(bias);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < O; ++o) {
            double s = Bs[o];
            const double* wr = Wt.data().data() + o * F;
            const double* xr = X.data().data() + b * F;
            for (std::size_t f = 0; f < F; ++f) s += wr[f] * xr[f];
            out[b * O + o] = s;
        }
    }
    auto backward = [=, &tape](std::span<const double> g, std::span<std::vector<double>*> gin) {
        const double* xd = tape.value(x).data().data();
        const double* wd = tape.value(weight).data().data();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < O; ++o) {
                const double go = g[b * O + o];
                if (gin[2]) (*gin[2])[o] += go;
                if (gin[1]) {
                    double* gw = gin[1]->data() + o * F;
                    for (std::size_t f = 0; f < F; ++f) gw[f] += go * xd[b * F + f];
                }
                if (gin[0]) {
                    double* gx = gin[0]->data() + b * F;
                    for (std::size_t f = 0; f < F; ++f) gx[f] += go * wd[o * F + f];
                }
            }
        }
    };
    return tape.record(std::move(out), {x, weight, bias}, backward, label);
}

Var relu(Tape& tape, Var x) {
    Tensor out = tape.value(x);
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    auto backward = [x, &tape](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        const Tensor& X = tape.value(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (X[i] > 0.0) (*gin[0])[i] += g[i];
        }
    };
    return tape.record(std::move(out), {x}, backward, "relu");
}

Var max_pool2x2(Tape& tape, Var x) {
    const Tensor& X = tape.value(x);
    if (X.rank() != 4 || X.dim(2) < 2 || X.dim(3) < 2) {
        throw std::invalid_argument("max_pool2x2: expected [B,C,H>=2,W>=2], got " + shape_str(X.shape()));
    }
    const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor out(Shape{B, C, Ho, Wo});
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* xp = X.data().data() + bc * H * W;
        for (std::size_t i = 0; i < Ho; ++i) {
            for (std::size_t j = 0; j < Wo; ++j) {
                std::size_t best = (2 * i) * W + 2 * j;
                for (std::size_t di = 0; di < 2; ++di) {
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx = (2 * i + di) * W + 2 * j + dj;
                        if (xp[idx] > xp[best]) best = idx;
                    }
                }
                const std::size_t o = (bc * Ho + i) * Wo + j;
                out[o] = xp[best];
                argmax[o] = bc * H * W + best;
            }
        }
    }
    auto backward = [argmax = std::move(argmax)](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        for (std::size_t o = 0; o < g.size(); ++o) (*gin[0])[argmax[o]] += g[o];
    };
    return tape.record(std::move(out), {x}, backward, "max_pool2x2");
}

Var global_avg_pool(Tape& tape, Var x) {
    const Tensor& X = tape.value(x);
    if (X.rank() != 4) throw std::invalid_argument("global_avg_pool: expected [B,C,H,W], got " + shape_str(X.shape()));
    const std::size_t B = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
    Tensor out(Shape{B, C});
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        double s = 0.0;
        for (std::size_t t = 0; t < HW; ++t) s += X[bc * HW + t];
        out[bc] = s / static_cast<double>(HW);
    }
    auto backward = [HW](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        for (std::size_t bc = 0; bc < g.size(); ++bc) {
            const double v = g[bc] / static_cast<double>(HW);
            for (std::size_t t = 0; t < HW; ++t) (*gin[0])[bc * HW + t] += v;
        }
    };
    return tape.record(std::move(out), {x}, backward, "global_avg_pool");
}

Var flatten(Tape& tape, Var x) {
    const Tensor& X = tape.value(x);
    const std::size_t B = X.dim(0);
    Tensor out = X.reshaped(Shape{B, X.size() / B});
    auto backward = [](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    };
    return tape.record(std::move(out), {x}, backward, "flatten");
}

Var add(Tape& tape, Var a, Var b) {
    const Tensor& A = tape.value(a);
    require_shape(tape.value(b), A.shape(), "add");
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tape.value(b)[i];
    auto backward = [](std::span<const double> g, std::span<std::vector<double>*> gin) {
        for (auto* gi : gin) {
            if (!gi) continue;
            for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
        }
    };
    return tape.record(std::move(out), {a, b}, backward, "add");
}

Var add_constant(Tape& tape, Var x, const Tensor& c) {
    require_shape(c, tape.value(x).shape(), "add_constant");
    Tensor out = tape.value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
    auto backward = [](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    };
    return tape.record(std::move(out), {x}, backward, "add_constant");
}

Var scale(Tape& tape, Var x, double s) {
    Tensor out = tape.value(x);
    for (auto& v : out.data()) v *= s;
    auto backward = [s](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
    };
    return tape.record(std::move(out), {x}, backward, "scale");
}

Var sum(Tape& tape, Var x) {
    double s = 0.0;
    for (double v : tape.value(x).data()) s += v;
    auto backward = [](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        for (auto& v : *gin[0]) v += g[0];
    };
    return tape.record(Tensor::scalar(s), {x}, backward, "sum");
}

Var half_squared_norm(Tape& tape, Var x) {
    double s = 0.0;
    for (double v : tape.value(x).data()) s += v * v;
    auto backward = [x, &tape](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        const Tensor& X = tape.value(x);
        for (std::size_t i = 0; i < X.size(); ++i) (*gin[0])[i] += g[0] * X[i];
    };
    return tape.record(Tensor::scalar(0.5 * s), {x}, backward, "half_squared_norm");
}

Var dot_constant(Tape& tape, Var x, const Tensor& c) {
    const Tensor& X = tape.value(x);
    require_shape(c, X.shape(), "dot_constant");
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += X[i] * c[i];
    auto backward = [c](std::span<const double> g, std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < c.size(); ++i) (*gin[0])[i] += g[0] * c[i];
    };
    return tape.record(Tensor::scalar(s), {x}, backward, "dot_constant");
}

Var softmax_cross_entropy(Tape& tape, Var logits, const Tensor& targets) {
    const Tensor& Z = tape.value(logits);
    if (Z.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: expected logits [B,n], got " + shape_str(Z.shape()));
    require_shape(targets, Z.shape(), "softmax_cross_entropy targets");
    const std::size_t B = Z.dim(0), n = Z.dim(1);
    Tensor probs(Z.shape());
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* z = Z.data().data() + b * n;
        const double zmax = *std::max_element(z, z + n);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(z[j] - zmax);
        const double log_denom = std::log(denom);
        for (std::size_t j = 0; j < n; ++j) {
            const double log_p = z[j] - zmax - log_denom;
            probs[b * n + j] = std::exp(log_p);
            const double t = targets[b * n + j];
            if (t != 0.0) loss -= t * log_p;
        }
    }
    loss /= static_cast<double>(B);
    auto backward = [probs = std::move(probs), targets, B](std::span<const double> g,
                                                           std::span<std::vector<double>*> gin) {
        if (!gin[0]) return;
        // d/dz of -sum t log softmax(z) is softmax(z) * sum(t) - t.
        const std::size_t n = probs.dim(1);
        for (std::size_t b = 0; b < B; ++b) {
            double tsum = 0.0;
            for (std::size_t j = 0; j < n; ++j) tsum += targets[b * n + j];
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t i = b * n + j;
                (*gin[0])[i] += g[0] * (probs[i] * tsum - targets[i]) / static_cast<double>(B);
            }
        }
    };
    return tape.record(Tensor::scalar(loss), {logits}, backward, "softmax_cross_entropy");
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
    Tensor t(Shape{labels.size(), num_classes});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= num_classes) {
            throw std::out_of_range("label " + std::to_string(labels[b]) + " outside [0," +
                                    std::to_string(num_classes) + ")");
        }
        t[b * num_classes + static_cast<std::size_t>(labels[b])] = 1.0;
    }
    return t;
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
    const Tensor& Z = tape.value(logits);
    if (Z.rank() != 2 || Z.dim(0) != labels.size()) {
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for logits " + shape_str(Z.shape()));
    }
    return softmax_cross_entropy(tape, logits, one_hot(labels, Z.dim(1)));
}

}  // namespace ops

}  // namespace fedfa
