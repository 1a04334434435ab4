#include "splat/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace splat::ad {

namespace {

int next_node_id() {
    static int counter = 0;
    return ++counter;
}

NodePtr make(Op op, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->inputs = std::move(inputs);
    n->id = next_node_id();
    return n;
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Constant: return "constant";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::MatMul: return "matmul";
        case Op::Conv2d: return "conv2d";
        case Op::Relu: return "relu";
        case Op::LeakyRelu: return "leaky_relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Abs: return "abs";
        case Op::Square: return "square";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::NormalizeRows: return "normalize_rows";
        case Op::StopGrad: return "stop_grad";
        case Op::Clamp: return "clamp";
        case Op::Upsample2: return "upsample2";
        case Op::GridSample: return "grid_sample";
        case Op::BroadcastRows: return "broadcast_rows";
    }
    return "?";
}

[[noreturn]] void node_error(const Node& n, const std::string& msg) {
    throw ValidationError(std::string(op_name(n.op)) + " node #" + std::to_string(n.id) + ": " +
                          msg);
}

// Broadcast classification for Add/Sub/Mul second operand.
enum class Bcast { Same, ScalarY, ScalarX, Row, Channel };

Bcast classify_bcast(const Node& n, const Shape& x, const Shape& y) {
    if (x == y) return Bcast::Same;
    if (shape_numel(y) == 1) return Bcast::ScalarY;
    if (shape_numel(x) == 1) return Bcast::ScalarX;
    if (x.size() == 2 && y.size() == 1 && y[0] == x[1]) return Bcast::Row;
    if (x.size() == 4 && y.size() == 1 && y[0] == x[1]) return Bcast::Channel;
    node_error(n, "incompatible shapes " + shape_str(x) + " vs " + shape_str(y));
}

void topo_visit(const NodePtr& n, std::unordered_set<const Node*>& seen,
                std::vector<NodePtr>& order) {
    if (seen.count(n.get())) return;
    seen.insert(n.get());
    for (auto& in : n->inputs) topo_visit(in, seen, order);
    order.push_back(n);
}

std::vector<NodePtr> topo_order(const std::vector<NodePtr>& roots) {
    std::unordered_set<const Node*> seen;
    std::vector<NodePtr> order;
    for (auto& r : roots) topo_visit(r, seen, order);
    return order;
}

struct ConvDims {
    std::size_t n, c, h, w, o, kh, kw, ho, wo, st, pad;
};

ConvDims conv_dims(const Node& nd, const Shape& in, const Shape& k) {
    if (in.size() != 4 || k.size() != 4) node_error(nd, "conv2d expects 4-D input and kernel");
    if (k[1] != in[1]) node_error(nd, "conv2d channel mismatch");
    ConvDims d{};
    d.n = in[0]; d.c = in[1]; d.h = in[2]; d.w = in[3];
    d.o = k[0]; d.kh = k[2]; d.kw = k[3];
    d.st = nd.stride; d.pad = nd.pad;
    if (d.h + 2 * d.pad < d.kh || d.w + 2 * d.pad < d.kw)
        node_error(nd, "conv2d kernel larger than padded input");
    d.ho = (d.h + 2 * d.pad - d.kh) / d.st + 1;
    d.wo = (d.w + 2 * d.pad - d.kw) / d.st + 1;
    return d;
}

using ValueMap = std::unordered_map<const Node*, Tensor>;

Tensor eval_node(const Node& nd, const Bindings& bindings, const ValueMap& vals) {
    auto in = [&](std::size_t i) -> const Tensor& { return vals.at(nd.inputs[i].get()); };
    switch (nd.op) {
        case Op::Leaf: {
            auto it = bindings.find(nd.name);
            if (it == bindings.end()) throw ValidationError("unbound leaf '" + nd.name + "'");
            return it->second;
        }
        case Op::Constant:
            return nd.cval;
        case Op::Add:
        case Op::Sub: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            double sgn = nd.op == Op::Sub ? -1.0 : 1.0;
            Bcast bc = classify_bcast(nd, x.shape, y.shape);
            if (bc == Bcast::ScalarX) {
                Tensor out(y.shape);
                for (std::size_t i = 0; i < y.numel(); ++i)
                    out.data[i] = x.data[0] + sgn * y.data[i];
                return out;
            }
            Tensor out(x.shape);
            switch (bc) {
                case Bcast::Same:
                    for (std::size_t i = 0; i < x.numel(); ++i)
                        out.data[i] = x.data[i] + sgn * y.data[i];
                    break;
                case Bcast::ScalarY:
                    for (std::size_t i = 0; i < x.numel(); ++i)
                        out.data[i] = x.data[i] + sgn * y.data[0];
                    break;
                case Bcast::Row: {
                    std::size_t c = x.shape[1];
                    for (std::size_t i = 0; i < x.numel(); ++i)
                        out.data[i] = x.data[i] + sgn * y.data[i % c];
                    break;
                }
                case Bcast::Channel: {
                    std::size_t hw = x.shape[2] * x.shape[3], c = x.shape[1];
                    for (std::size_t i = 0; i < x.numel(); ++i)
                        out.data[i] = x.data[i] + sgn * y.data[(i / hw) % c];
                    break;
                }
                default: break;
            }
            return out;
        }
        case Op::Mul: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            Bcast bc = classify_bcast(nd, x.shape, y.shape);
            if (bc == Bcast::ScalarX) {
                Tensor out(y.shape);
                for (std::size_t i = 0; i < y.numel(); ++i) out.data[i] = x.data[0] * y.data[i];
                return out;
            }
            if (bc != Bcast::Same && bc != Bcast::ScalarY)
                node_error(nd, "mul supports equal shapes or a scalar operand");
            Tensor out(x.shape);
            if (bc == Bcast::Same)
                for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] * y.data[i];
            else
                for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] * y.data[0];
            return out;
        }
        case Op::MatMul: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            if (x.ndim() != 2 || y.ndim() != 2 || x.shape[1] != y.shape[0])
                node_error(nd, "matmul shapes " + shape_str(x.shape) + " x " + shape_str(y.shape));
            std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
            Tensor out({m, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    double xv = x.data[i * k + l];
                    if (xv == 0.0) continue;
                    const double* yr = &y.data[l * n];
                    double* outr = &out.data[i * n];
                    for (std::size_t j = 0; j < n; ++j) outr[j] += xv * yr[j];
                }
            return out;
        }
        case Op::Conv2d: {
            const Tensor& x = in(0);
            const Tensor& k = in(1);
            ConvDims d = conv_dims(nd, x.shape, k.shape);
            Tensor out({d.n, d.o, d.ho, d.wo});
            for (std::size_t nn = 0; nn < d.n; ++nn)
                for (std::size_t o = 0; o < d.o; ++o)
                    for (std::size_t i = 0; i < d.ho; ++i)
                        for (std::size_t j = 0; j < d.wo; ++j) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < d.c; ++c)
                                for (std::size_t p = 0; p < d.kh; ++p)
                                    for (std::size_t q = 0; q < d.kw; ++q) {
                                        std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * d.st + p) -
                                                            static_cast<std::ptrdiff_t>(d.pad);
                                        std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * d.st + q) -
                                                            static_cast<std::ptrdiff_t>(d.pad);
                                        if (yy < 0 || xx < 0 ||
                                            yy >= static_cast<std::ptrdiff_t>(d.h) ||
                                            xx >= static_cast<std::ptrdiff_t>(d.w))
                                            continue;
                                        acc += x.data[((nn * d.c + c) * d.h + yy) * d.w + xx] *
                                               k.data[((o * d.c + c) * d.kh + p) * d.kw + q];
                                    }
                            out.data[((nn * d.o + o) * d.ho + i) * d.wo + j] = acc;
                        }
            return out;
        }
        case Op::Relu: {
            Tensor out = in(0);
            for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
            return out;
        }
        case Op::LeakyRelu: {
            Tensor out = in(0);
            for (auto& v : out.data) v = v > 0.0 ? v : nd.a * v;
            return out;
        }
        case Op::Sigmoid: {
            Tensor out = in(0);
            for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
            return out;
        }
        case Op::Sum:
        case Op::Mean: {
            const Tensor& x = in(0);
            double acc = 0.0;
            for (double v : x.data) acc += v;
            if (nd.op == Op::Mean) acc /= static_cast<double>(x.numel());
            return Tensor::scalar(acc);
        }
        case Op::Abs: {
            Tensor out = in(0);
            for (auto& v : out.data) v = std::fabs(v);
            return out;
        }
        case Op::Square: {
            Tensor out = in(0);
            for (auto& v : out.data) v = v * v;
            return out;
        }
        case Op::Exp: {
            Tensor out = in(0);
            for (auto& v : out.data) v = std::exp(v);
            return out;
        }
        case Op::Log: {
            Tensor out = in(0);
            for (auto& v : out.data) v = std::log(v);
            return out;
        }
        case Op::Concat: {
            Shape s = in(0).shape;
            if (nd.axis >= s.size()) node_error(nd, "concat axis out of range");
            std::size_t total_axis = 0;
            for (std::size_t i = 0; i < nd.inputs.size(); ++i) {
                Shape si = in(i).shape;
                Shape ref = s;
                ref[nd.axis] = si.size() > nd.axis ? si[nd.axis] : 0;
                if (si != ref) node_error(nd, "concat input shapes differ off-axis");
                total_axis += si[nd.axis];
            }
            Shape os = s;
            os[nd.axis] = total_axis;
            Tensor out(os);
            std::size_t outer = 1, inner = 1;
            for (std::size_t i = 0; i < nd.axis; ++i) outer *= s[i];
            for (std::size_t i = nd.axis + 1; i < s.size(); ++i) inner *= s[i];
            std::size_t off = 0;
            for (std::size_t i = 0; i < nd.inputs.size(); ++i) {
                const Tensor& x = in(i);
                std::size_t ax = x.shape[nd.axis];
                for (std::size_t a = 0; a < outer; ++a)
                    for (std::size_t b = 0; b < ax; ++b)
                        std::copy_n(&x.data[(a * ax + b) * inner], inner,
                                    &out.data[(a * total_axis + off + b) * inner]);
                off += ax;
            }
            return out;
        }
        case Op::Slice: {
            const Tensor& x = in(0);
            if (nd.axis >= x.ndim() || nd.start + nd.len > x.shape[nd.axis])
                node_error(nd, "slice out of range on shape " + shape_str(x.shape));
            Shape os = x.shape;
            os[nd.axis] = nd.len;
            Tensor out(os);
            std::size_t outer = 1, inner = 1;
            for (std::size_t i = 0; i < nd.axis; ++i) outer *= x.shape[i];
            for (std::size_t i = nd.axis + 1; i < x.ndim(); ++i) inner *= x.shape[i];
            std::size_t ax = x.shape[nd.axis];
            for (std::size_t a = 0; a < outer; ++a)
                for (std::size_t b = 0; b < nd.len; ++b)
                    std::copy_n(&x.data[(a * ax + nd.start + b) * inner], inner,
                                &out.data[(a * nd.len + b) * inner]);
            return out;
        }
        case Op::NormalizeRows: {
            const Tensor& x = in(0);
            std::size_t d = x.ndim() == 1 ? x.shape[0] : x.shape[x.ndim() - 1];
            std::size_t rows = x.numel() / d;
            Tensor out(x.shape);
            for (std::size_t r = 0; r < rows; ++r) {
                double n2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) n2 += x.data[r * d + j] * x.data[r * d + j];
                double n = std::max(std::sqrt(n2), 1e-12);
                for (std::size_t j = 0; j < d; ++j) out.data[r * d + j] = x.data[r * d + j] / n;
            }
            return out;
        }
        case Op::StopGrad:
            return in(0);
        case Op::Clamp: {
            Tensor out = in(0);
            for (auto& v : out.data) v = std::min(std::max(v, nd.a), nd.b);
            return out;
        }
        case Op::Upsample2: {
            const Tensor& x = in(0);
            if (x.ndim() != 4) node_error(nd, "upsample2 expects 4-D input");
            std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
            Tensor out({n, c, 2 * h, 2 * w});
            for (std::size_t nc = 0; nc < n * c; ++nc)
                for (std::size_t i = 0; i < 2 * h; ++i)
                    for (std::size_t j = 0; j < 2 * w; ++j)
                        out.data[(nc * 2 * h + i) * 2 * w + j] =
                            x.data[(nc * h + i / 2) * w + j / 2];
            return out;
        }
        case Op::GridSample: {
            const Tensor& grid = in(0);
            const Tensor& uv = in(1);
            if (grid.ndim() != 3 || uv.ndim() != 2 || uv.shape[1] != 2)
                node_error(nd, "grid_sample expects grid [H,W,D] and uv [N,2]");
            std::size_t h = grid.shape[0], w = grid.shape[1], d = grid.shape[2];
            std::size_t n = uv.shape[0];
            Tensor out({n, d});
            for (std::size_t r = 0; r < n; ++r) {
                double u = std::min(std::max(uv.data[2 * r], 0.0), 1.0);
                double v = std::min(std::max(uv.data[2 * r + 1], 0.0), 1.0);
                double x = u * static_cast<double>(w - 1);
                double y = v * static_cast<double>(h - 1);
                std::size_t x0 = std::min(static_cast<std::size_t>(x), w - 1);
                std::size_t y0 = std::min(static_cast<std::size_t>(y), h - 1);
                std::size_t x1 = std::min(x0 + 1, w - 1);
                std::size_t y1 = std::min(y0 + 1, h - 1);
                double fx = x - static_cast<double>(x0);
                double fy = y - static_cast<double>(y0);
                for (std::size_t k = 0; k < d; ++k) {
                    double g00 = grid.data[(y0 * w + x0) * d + k];
                    double g01 = grid.data[(y0 * w + x1) * d + k];
                    double g10 = grid.data[(y1 * w + x0) * d + k];
                    double g11 = grid.data[(y1 * w + x1) * d + k];
                    out.data[r * d + k] = (1 - fy) * ((1 - fx) * g00 + fx * g01) +
                                          fy * ((1 - fx) * g10 + fx * g11);
                }
            }
            return out;
        }
        case Op::BroadcastRows: {
            const Tensor& x = in(0);
            std::size_t d = x.numel();
            Tensor out({nd.nrows, d});
            for (std::size_t r = 0; r < nd.nrows; ++r)
                std::copy_n(x.data.data(), d, &out.data[r * d]);
            return out;
        }
    }
    node_error(nd, "unhandled op");
}

void accumulate(Tensor& acc, const Tensor& g) {
    if (acc.numel() == 0) {
        acc = g;
        return;
    }
    for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += g.data[i];
}

// Reduce an adjoint of x's shape back to y's broadcast shape.
Tensor reduce_bcast(const Tensor& adj, const Shape& xshape, const Shape& yshape, Bcast bc,
                    double sgn) {
    Tensor out(yshape);
    switch (bc) {
        case Bcast::Same:
            for (std::size_t i = 0; i < adj.numel(); ++i) out.data[i] = sgn * adj.data[i];
            break;
        case Bcast::ScalarY: {
            double acc = 0.0;
            for (double v : adj.data) acc += v;
            out.data[0] = sgn * acc;
            break;
        }
        case Bcast::Row: {
            std::size_t c = xshape[1];
            for (std::size_t i = 0; i < adj.numel(); ++i) out.data[i % c] += sgn * adj.data[i];
            break;
        }
        case Bcast::Channel: {
            std::size_t hw = xshape[2] * xshape[3], c = xshape[1];
            for (std::size_t i = 0; i < adj.numel(); ++i)
                out.data[(i / hw) % c] += sgn * adj.data[i];
            break;
        }
        default: break;
    }
    return out;
}

void backward_node(const Node& nd, const ValueMap& vals, const Tensor& adj,
                   std::unordered_map<const Node*, Tensor>& adjoints) {
    auto in = [&](std::size_t i) -> const Tensor& { return vals.at(nd.inputs[i].get()); };
    auto push = [&](std::size_t i, const Tensor& g) {
        accumulate(adjoints[nd.inputs[i].get()], g);
    };
    switch (nd.op) {
        case Op::Leaf:
        case Op::Constant:
            return;
        case Op::Add:
        case Op::Sub: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            double sgn = nd.op == Op::Sub ? -1.0 : 1.0;
            Bcast bc = classify_bcast(nd, x.shape, y.shape);
            if (bc == Bcast::ScalarX) {
                double acc = 0.0;
                for (double v : adj.data) acc += v;
                push(0, Tensor(x.shape, {acc}));
                Tensor gy(y.shape);
                for (std::size_t i = 0; i < y.numel(); ++i) gy.data[i] = sgn * adj.data[i];
                push(1, gy);
                return;
            }
            push(0, adj);
            push(1, reduce_bcast(adj, x.shape, y.shape, bc, sgn));
            return;
        }
        case Op::Mul: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            Bcast bc = classify_bcast(nd, x.shape, y.shape);
            if (bc == Bcast::Same) {
                Tensor gx(x.shape), gy(y.shape);
                for (std::size_t i = 0; i < x.numel(); ++i) {
                    gx.data[i] = adj.data[i] * y.data[i];
                    gy.data[i] = adj.data[i] * x.data[i];
                }
                push(0, gx);
                push(1, gy);
            } else if (bc == Bcast::ScalarY) {
                Tensor gx(x.shape);
                double acc = 0.0;
                for (std::size_t i = 0; i < x.numel(); ++i) {
                    gx.data[i] = adj.data[i] * y.data[0];
                    acc += adj.data[i] * x.data[i];
                }
                push(0, gx);
                push(1, Tensor(y.shape, {acc}));
            } else {  // ScalarX
                Tensor gy(y.shape);
                double acc = 0.0;
                for (std::size_t i = 0; i < y.numel(); ++i) {
                    gy.data[i] = adj.data[i] * x.data[0];
                    acc += adj.data[i] * y.data[i];
                }
                push(1, gy);
                push(0, Tensor(x.shape, {acc}));
            }
            return;
        }
        case Op::MatMul: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
            Tensor gx({m, k}), gy({k, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double a = adj.data[i * n + j];
                    if (a == 0.0) continue;
                    for (std::size_t l = 0; l < k; ++l) {
                        gx.data[i * k + l] += a * y.data[l * n + j];
                        gy.data[l * n + j] += a * x.data[i * k + l];
                    }
                }
            push(0, gx);
            push(1, gy);
            return;
        }
        case Op::Conv2d: {
            const Tensor& x = in(0);
            const Tensor& k = in(1);
            ConvDims d = conv_dims(nd, x.shape, k.shape);
            Tensor gx(x.shape), gk(k.shape);
            for (std::size_t nn = 0; nn < d.n; ++nn)
                for (std::size_t o = 0; o < d.o; ++o)
                    for (std::size_t i = 0; i < d.ho; ++i)
                        for (std::size_t j = 0; j < d.wo; ++j) {
                            double a = adj.data[((nn * d.o + o) * d.ho + i) * d.wo + j];
                            if (a == 0.0) continue;
                            for (std::size_t c = 0; c < d.c; ++c)
                                for (std::size_t p = 0; p < d.kh; ++p)
                                    for (std::size_t q = 0; q < d.kw; ++q) {
                                        std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * d.st + p) -
                                                            static_cast<std::ptrdiff_t>(d.pad);
                                        std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * d.st + q) -
                                                            static_cast<std::ptrdiff_t>(d.pad);
                                        if (yy < 0 || xx < 0 ||
                                            yy >= static_cast<std::ptrdiff_t>(d.h) ||
                                            xx >= static_cast<std::ptrdiff_t>(d.w))
                                            continue;
                                        std::size_t xi = ((nn * d.c + c) * d.h + yy) * d.w + xx;
                                        std::size_t ki = ((o * d.c + c) * d.kh + p) * d.kw + q;
                                        gx.data[xi] += a * k.data[ki];
                                        gk.data[ki] += a * x.data[xi];
                                    }
                        }
            push(0, gx);
            push(1, gk);
            return;
        }
        case Op::Relu: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i)
                g.data[i] = x.data[i] > 0.0 ? adj.data[i] : 0.0;
            push(0, g);
            return;
        }
        case Op::LeakyRelu: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i)
                g.data[i] = x.data[i] > 0.0 ? adj.data[i] : nd.a * adj.data[i];
            push(0, g);
            return;
        }
        case Op::Sigmoid: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i) {
                double s = 1.0 / (1.0 + std::exp(-x.data[i]));
                g.data[i] = adj.data[i] * s * (1.0 - s);
            }
            push(0, g);
            return;
        }
        case Op::Sum: {
            push(0, Tensor::full(in(0).shape, adj.data[0]));
            return;
        }
        case Op::Mean: {
            push(0, Tensor::full(in(0).shape,
                                 adj.data[0] / static_cast<double>(in(0).numel())));
            return;
        }
        case Op::Abs: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i)
                g.data[i] = x.data[i] > 0.0 ? adj.data[i] : (x.data[i] < 0.0 ? -adj.data[i] : 0.0);
            push(0, g);
            return;
        }
        case Op::Square: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i) g.data[i] = 2.0 * x.data[i] * adj.data[i];
            push(0, g);
            return;
        }
        case Op::Exp: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i)
                g.data[i] = adj.data[i] * std::exp(x.data[i]);
            push(0, g);
            return;
        }
        case Op::Log: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i) g.data[i] = adj.data[i] / x.data[i];
            push(0, g);
            return;
        }
        case Op::Concat: {
            Shape s = in(0).shape;
            std::size_t outer = 1, inner = 1;
            for (std::size_t i = 0; i < nd.axis; ++i) outer *= s[i];
            for (std::size_t i = nd.axis + 1; i < s.size(); ++i) inner *= s[i];
            std::size_t total_axis = 0;
            for (std::size_t i = 0; i < nd.inputs.size(); ++i) total_axis += in(i).shape[nd.axis];
            std::size_t off = 0;
            for (std::size_t i = 0; i < nd.inputs.size(); ++i) {
                const Tensor& x = in(i);
                std::size_t ax = x.shape[nd.axis];
                Tensor g(x.shape);
                for (std::size_t a = 0; a < outer; ++a)
                    for (std::size_t b = 0; b < ax; ++b)
                        std::copy_n(&adj.data[(a * total_axis + off + b) * inner], inner,
                                    &g.data[(a * ax + b) * inner]);
                push(i, g);
                off += ax;
            }
            return;
        }
        case Op::Slice: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            std::size_t outer = 1, inner = 1;
            for (std::size_t i = 0; i < nd.axis; ++i) outer *= x.shape[i];
            for (std::size_t i = nd.axis + 1; i < x.ndim(); ++i) inner *= x.shape[i];
            std::size_t ax = x.shape[nd.axis];
            for (std::size_t a = 0; a < outer; ++a)
                for (std::size_t b = 0; b < nd.len; ++b)
                    std::copy_n(&adj.data[(a * nd.len + b) * inner], inner,
                                &g.data[(a * ax + nd.start + b) * inner]);
            push(0, g);
            return;
        }
        case Op::NormalizeRows: {
            const Tensor& x = in(0);
            std::size_t d = x.ndim() == 1 ? x.shape[0] : x.shape[x.ndim() - 1];
            std::size_t rows = x.numel() / d;
            Tensor g(x.shape);
            for (std::size_t r = 0; r < rows; ++r) {
                double n2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) n2 += x.data[r * d + j] * x.data[r * d + j];
                double n = std::max(std::sqrt(n2), 1e-12);
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    dot += adj.data[r * d + j] * x.data[r * d + j] / n;
                for (std::size_t j = 0; j < d; ++j)
                    g.data[r * d + j] = (adj.data[r * d + j] - dot * x.data[r * d + j] / n) / n;
            }
            push(0, g);
            return;
        }
        case Op::StopGrad:
            return;
        case Op::Clamp: {
            const Tensor& x = in(0);
            Tensor g(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i)
                g.data[i] = (x.data[i] > nd.a && x.data[i] < nd.b) ? adj.data[i] : 0.0;
            push(0, g);
            return;
        }
        case Op::Upsample2: {
            const Tensor& x = in(0);
            std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
            Tensor g(x.shape);
            for (std::size_t nc = 0; nc < n * c; ++nc)
                for (std::size_t i = 0; i < 2 * h; ++i)
                    for (std::size_t j = 0; j < 2 * w; ++j)
                        g.data[(nc * h + i / 2) * w + j / 2] +=
                            adj.data[(nc * 2 * h + i) * 2 * w + j];
            push(0, g);
            return;
        }
        case Op::GridSample: {
            const Tensor& grid = in(0);
            const Tensor& uv = in(1);
            std::size_t h = grid.shape[0], w = grid.shape[1], d = grid.shape[2];
            std::size_t n = uv.shape[0];
            Tensor ggrid(grid.shape), guv(uv.shape);
            for (std::size_t r = 0; r < n; ++r) {
                double u = uv.data[2 * r], v = uv.data[2 * r + 1];
                bool u_in = u > 0.0 && u < 1.0, v_in = v > 0.0 && v < 1.0;
                double uc = std::min(std::max(u, 0.0), 1.0);
                double vc = std::min(std::max(v, 0.0), 1.0);
                double x = uc * static_cast<double>(w - 1);
                double y = vc * static_cast<double>(h - 1);
                std::size_t x0 = std::min(static_cast<std::size_t>(x), w - 1);
                std::size_t y0 = std::min(static_cast<std::size_t>(y), h - 1);
                std::size_t x1 = std::min(x0 + 1, w - 1);
                std::size_t y1 = std::min(y0 + 1, h - 1);
                double fx = x - static_cast<double>(x0);
                double fy = y - static_cast<double>(y0);
                double du = 0.0, dv = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    double a = adj.data[r * d + k];
                    double g00 = grid.data[(y0 * w + x0) * d + k];
                    double g01 = grid.data[(y0 * w + x1) * d + k];
                    double g10 = grid.data[(y1 * w + x0) * d + k];
                    double g11 = grid.data[(y1 * w + x1) * d + k];
                    ggrid.data[(y0 * w + x0) * d + k] += a * (1 - fy) * (1 - fx);
                    ggrid.data[(y0 * w + x1) * d + k] += a * (1 - fy) * fx;
                    ggrid.data[(y1 * w + x0) * d + k] += a * fy * (1 - fx);
                    ggrid.data[(y1 * w + x1) * d + k] += a * fy * fx;
                    du += a * ((1 - fy) * (g01 - g00) + fy * (g11 - g10));
                    dv += a * (((1 - fx) * g10 + fx * g11) - ((1 - fx) * g00 + fx * g01));
                }
                if (u_in) guv.data[2 * r] = du * static_cast<double>(w - 1);
                if (v_in) guv.data[2 * r + 1] = dv * static_cast<double>(h - 1);
            }
            push(0, ggrid);
            push(1, guv);
            return;
        }
        case Op::BroadcastRows: {
            const Tensor& x = in(0);
            std::size_t d = x.numel();
            Tensor g(x.shape);
            for (std::size_t r = 0; r < nd.nrows; ++r)
                for (std::size_t j = 0; j < d; ++j) g.data[j] += adj.data[r * d + j];
            push(0, g);
            return;
        }
    }
}

ValueMap forward_all(const std::vector<NodePtr>& order, const Bindings& bindings) {
    ValueMap vals;
    for (auto& n : order) {
        Tensor t = eval_node(*n, bindings, vals);
        if (!t.all_finite())
            throw NumericalError(std::string("non-finite value at ") + op_name(n->op) +
                                 " node #" + std::to_string(n->id));
        vals.emplace(n.get(), std::move(t));
    }
    return vals;
}

}  // namespace

Expr leaf(const std::string& name) {
    auto n = make(Op::Leaf, {});
    n->name = name;
    return {n};
}
Expr constant(Tensor t) {
    auto n = make(Op::Constant, {});
    n->cval = std::move(t);
    return {n};
}
Expr constant_scalar(double v) { return constant(Tensor::scalar(v)); }
Expr add(Expr x, Expr y) { return {make(Op::Add, {x.node, y.node})}; }
Expr sub(Expr x, Expr y) { return {make(Op::Sub, {x.node, y.node})}; }
Expr mul(Expr x, Expr y) { return {make(Op::Mul, {x.node, y.node})}; }
Expr scale(Expr x, double c) { return mul(x, constant_scalar(c)); }
Expr matmul(Expr x, Expr y) { return {make(Op::MatMul, {x.node, y.node})}; }
Expr conv2d(Expr input, Expr kernel, std::size_t stride, std::size_t pad) {
    auto n = make(Op::Conv2d, {input.node, kernel.node});
    n->stride = stride;
    n->pad = pad;
    return {n};
}
Expr relu(Expr x) { return {make(Op::Relu, {x.node})}; }
Expr leaky_relu(Expr x, double slope) {
    auto n = make(Op::LeakyRelu, {x.node});
    n->a = slope;
    return {n};
}
Expr sigmoid(Expr x) { return {make(Op::Sigmoid, {x.node})}; }
Expr sum(Expr x) { return {make(Op::Sum, {x.node})}; }
Expr mean(Expr x) { return {make(Op::Mean, {x.node})}; }
Expr abs(Expr x) { return {make(Op::Abs, {x.node})}; }
Expr square(Expr x) { return {make(Op::Square, {x.node})}; }
Expr exp(Expr x) { return {make(Op::Exp, {x.node})}; }
Expr log(Expr x) { return {make(Op::Log, {x.node})}; }
Expr concat(std::vector<Expr> xs, std::size_t axis) {
    std::vector<NodePtr> ins;
    for (auto& x : xs) ins.push_back(x.node);
    auto n = make(Op::Concat, std::move(ins));
    n->axis = axis;
    return {n};
}
Expr slice(Expr x, std::size_t axis, std::size_t start, std::size_t len) {
    auto n = make(Op::Slice, {x.node});
    n->axis = axis;
    n->start = start;
    n->len = len;
    return {n};
}
Expr normalize_rows(Expr x) { return {make(Op::NormalizeRows, {x.node})}; }
Expr stop_grad(Expr x) { return {make(Op::StopGrad, {x.node})}; }
Expr clamp(Expr x, double lo, double hi) {
    auto n = make(Op::Clamp, {x.node});
    n->a = lo;
    n->b = hi;
    return {n};
}
Expr upsample2(Expr x) { return {make(Op::Upsample2, {x.node})}; }
Expr grid_sample(Expr grid, Expr uv) { return {make(Op::GridSample, {grid.node, uv.node})}; }
Expr broadcast_rows(Expr row, std::size_t n) {
    auto nd = make(Op::BroadcastRows, {row.node});
    nd->nrows = n;
    return {nd};
}

Tensor evaluate(const Expr& out, const Bindings& bindings) {
    auto order = topo_order({out.node});
    auto vals = forward_all(order, bindings);
    return vals.at(out.node.get());
}

std::vector<Tensor> evaluate_many(const std::vector<Expr>& outs, const Bindings& bindings) {
    std::vector<NodePtr> roots;
    roots.reserve(outs.size());
    for (const auto& e : outs) roots.push_back(e.node);
    auto order = topo_order(roots);
    auto vals = forward_all(order, bindings);
    std::vector<Tensor> res;
    res.reserve(outs.size());
    for (const auto& e : outs) res.push_back(vals.at(e.node.get()));
    return res;
}

GradMap backward_seeded(const std::vector<std::pair<Expr, Tensor>>& seeds,
                        const Bindings& bindings, const std::set<std::string>& wrt) {
    std::vector<NodePtr> roots;
    for (auto& [e, s] : seeds) roots.push_back(e.node);
    auto order = topo_order(roots);
    auto vals = forward_all(order, bindings);

    std::unordered_map<const Node*, Tensor> adjoints;
    for (auto& [e, s] : seeds) {
        if (!vals.at(e.node.get()).same_shape(s))
            throw ValidationError("seed shape mismatch at node #" + std::to_string(e.node->id));
        accumulate(adjoints[e.node.get()], s);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto found = adjoints.find(it->get());
        if (found == adjoints.end() || found->second.numel() == 0) continue;
        backward_node(**it, vals, found->second, adjoints);
    }

    GradMap grads;
    for (auto& n : order) {
        if (n->op != Op::Leaf || !wrt.count(n->name)) continue;
        auto found = adjoints.find(n.get());
        if (found != adjoints.end() && found->second.numel() > 0)
            grads[n->name] = found->second;
        else
            grads[n->name] = Tensor::zeros(vals.at(n.get()).shape);
    }
    for (auto& name : wrt)
        if (!grads.count(name)) throw ValidationError("requested leaf '" + name + "' not in graph");
    return grads;
}

GradMap gradient(const Expr& out, const Bindings& bindings, const std::set<std::string>& wrt) {
    Tensor v = evaluate(out, bindings);
    if (v.numel() != 1)
        throw ValidationError("gradient requires a scalar output, got shape " +
                              shape_str(v.shape));
    return backward_seeded({{out, Tensor::scalar(1.0)}}, bindings, wrt);
}

GradCheckReport grad_check(const Expr& out, const Bindings& bindings,
                           const std::set<std::string>& wrt, double step) {
    if (step <= 0.0) throw ValidationError("grad_check step must be > 0");
    GradMap analytic = gradient(out, bindings, wrt);
    GradCheckReport rep;
    for (auto& name : wrt) {
        Bindings b = bindings;
        Tensor& x = b.at(name);
        const Tensor& g = analytic.at(name);
        double worst = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            double orig = x.data[i];
            x.data[i] = orig + step;
            double fp = evaluate(out, b).data[0];
            x.data[i] = orig - step;
            double fm = evaluate(out, b).data[0];
            x.data[i] = orig;
            double fd = (fp - fm) / (2.0 * step);
            double rel = std::fabs(g.data[i] - fd) / std::max(1.0, std::fabs(g.data[i]));
            worst = std::max(worst, rel);
        }
        rep.per_leaf[name] = worst;
        rep.worst = std::max(rep.worst, worst);
    }
    return rep;
}

}  // namespace splat::ad
