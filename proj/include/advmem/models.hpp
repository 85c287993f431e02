#pragma once

#include "advmem/core.hpp"

#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace advmem {

enum class ParamRole { conv_filter, dense, bias, norm_scale, norm_shift };

inline std::string to_string(ParamRole r)
{
    switch (r) {
    case ParamRole::conv_filter: return "conv_filter";
    case ParamRole::dense: return "dense";
    case ParamRole::bias: return "bias";
    case ParamRole::norm_scale: return "norm_scale";
    case ParamRole::norm_shift: return "norm_shift";
    }
    return "?";
}

inline ParamRole param_role_from_string(const std::string& s)
{
    if (s == "conv_filter") return ParamRole::conv_filter;
    if (s == "dense") return ParamRole::dense;
    if (s == "bias") return ParamRole::bias;
    if (s == "norm_scale") return ParamRole::norm_scale;
    if (s == "norm_shift") return ParamRole::norm_shift;
    throw Error("unknown parameter role: " + s);
}

[[nodiscard]] inline bool is_weight(ParamRole r) { return r == ParamRole::conv_filter || r == ParamRole::dense; }

/// Geometry of a 2-D convolution over HWC inputs. Square kernels, symmetric zero padding.
struct ConvGeometry {
    std::size_t in_h = 0, in_w = 0, in_c = 0;
    std::size_t out_c = 0;
    std::size_t kernel = 3, stride = 1, pad = 1;

    [[nodiscard]] std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    [[nodiscard]] std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    [[nodiscard]] std::size_t patch() const { return kernel * kernel * in_c; }
    [[nodiscard]] std::size_t in_size() const { return in_h * in_w * in_c; }
    [[nodiscard]] std::size_t out_size() const { return out_h() * out_w() * out_c; }
};

/// One named parameter array. Dense weights are (out, in) row-major; conv
/// filters are (out_c, kernel, kernel, in_c).
struct ParamGroup {
    std::string name;
    ParamRole role = ParamRole::dense;
    std::vector<std::size_t> shape;
    Vector values;
    std::optional<ConvGeometry> conv;

    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

enum class Family { linear, mlp, convnet, resnet_small };

inline std::string to_string(Family f)
{
    switch (f) {
    case Family::linear: return "linear";
    case Family::mlp: return "mlp";
    case Family::convnet: return "convnet";
    case Family::resnet_small: return "resnet_small";
    }
    return "?";
}

inline Family family_from_string(const std::string& s)
{
    if (s == "linear") return Family::linear;
    if (s == "mlp") return Family::mlp;
    if (s == "convnet") return Family::convnet;
    if (s == "resnet_small") return Family::resnet_small;
    throw Error("unsupported model family: " + s);
}

/// Architecture description.
///
/// widths: mlp hidden widths; convnet channels per conv block (odd blocks
/// downsample by 2); resnet_small stem width followed by one residual block
/// per further entry (blocks after the first downsample by 2).
struct ArchSpec {
    Family family = Family::linear;
    std::vector<std::size_t> widths;
    int class_count = 2;
    InputShape input_shape = InputShape::flat(2);
    std::uint64_t init_seed = 0;

    void validate() const
    {
        require(class_count >= 2, "ArchSpec: class_count must be >= 2");
        require(input_shape.size() >= 1, "ArchSpec: empty input shape");
        if (family == Family::convnet || family == Family::resnet_small) {
            require(input_shape.is_image(), "ArchSpec: " + to_string(family) + " needs image-shaped input");
            require(!widths.empty(), "ArchSpec: " + to_string(family) + " needs at least one width");
        }
        for (auto w : widths) {
            require(w >= 1, "ArchSpec: widths must be >= 1");
        }
    }

    [[nodiscard]] std::string tag() const
    {
        std::ostringstream ss;
        ss << to_string(family) << "-w";
        for (std::size_t i = 0; i < widths.size(); ++i) {
            ss << (i ? "x" : "") << widths[i];
        }
        ss << "-in";
        for (std::size_t i = 0; i < input_shape.dims.size(); ++i) {
            ss << (i ? "x" : "") << input_shape.dims[i];
        }
        ss << "-c" << class_count;
        return ss.str();
    }
};

/// Model parameters theta = {W_i} as ordered named groups.
struct ModelParameters {
    ArchSpec arch;
    std::string arch_tag;
    std::size_t layer_count = 0;
    std::vector<ParamGroup> groups;

    [[nodiscard]] std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& g : groups) {
            n += g.size();
        }
        return n;
    }

    [[nodiscard]] std::vector<std::size_t> offsets() const
    {
        std::vector<std::size_t> off;
        std::size_t at = 0;
        for (const auto& g : groups) {
            off.push_back(at);
            at += g.size();
        }
        return off;
    }

    [[nodiscard]] Vector flatten() const
    {
        Vector flat(static_cast<Eigen::Index>(parameter_count()));
        std::size_t at = 0;
        for (const auto& g : groups) {
            flat.segment(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(g.size())) = g.values;
            at += g.size();
        }
        return flat;
    }

    void assign(const Vector& flat)
    {
        require(static_cast<std::size_t>(flat.size()) == parameter_count(), "assign: flat vector length mismatch");
        std::size_t at = 0;
        for (auto& g : groups) {
            g.values = flat.segment(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(g.size()));
            at += g.size();
        }
    }

    /// theta + step * direction (direction flattened in group order).
    [[nodiscard]] ModelParameters moved(double step, const Vector& direction) const
    {
        ModelParameters out = *this;
        out.assign(flatten() + step * direction);
        return out;
    }

    [[nodiscard]] const ParamGroup& group(const std::string& name) const
    {
        for (const auto& g : groups) {
            if (g.name == name) {
                return g;
            }
        }
        throw Error("no parameter group named " + name);
    }

    void validate() const
    {
        for (std::size_t i = 0; i < groups.size(); ++i) {
            require(groups[i].values.allFinite(), "parameter group " + groups[i].name + " has non-finite values");
            for (std::size_t j = i + 1; j < groups.size(); ++j) {
                require(groups[i].name != groups[j].name, "duplicate parameter group name " + groups[i].name);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Convolution primitives (HWC layout, batch rows).

namespace detail {

/// (N*Ho*Wo) x (k*k*C) patch matrix; patch order (ky, kx, c) matches filter layout.
inline Matrix im2col(const Matrix& x, const ConvGeometry& g)
{
    const auto N = static_cast<std::size_t>(x.rows());
    const auto Ho = g.out_h(), Wo = g.out_w(), K = g.kernel, C = g.in_c;
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(N * Ho * Wo), static_cast<Eigen::Index>(g.patch()));
    for (std::size_t n = 0; n < N; ++n) {
        const double* src = x.row(static_cast<Eigen::Index>(n)).data();
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                double* dst = cols.row(static_cast<Eigen::Index>((n * Ho + oy) * Wo + ox)).data();
                for (std::size_t ky = 0; ky < K; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
                            continue;
                        }
                        const double* s = src + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * C;
                        std::copy(s, s + C, dst + (ky * K + kx) * C);
                    }
                }
            }
        }
    }
    return cols;
}

/// Adjoint of im2col: scatter-add patch gradients back to an N x (H*W*C) input gradient.
inline Matrix col2im(const Matrix& cols, std::size_t N, const ConvGeometry& g)
{
    const auto Ho = g.out_h(), Wo = g.out_w(), K = g.kernel, C = g.in_c;
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(g.in_size()));
    for (std::size_t n = 0; n < N; ++n) {
        double* dst = x.row(static_cast<Eigen::Index>(n)).data();
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const double* src = cols.row(static_cast<Eigen::Index>((n * Ho + oy) * Wo + ox)).data();
                for (std::size_t ky = 0; ky < K; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
                            continue;
                        }
                        double* d = dst + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * C;
                        const double* s = src + (ky * K + kx) * C;
                        for (std::size_t c = 0; c < C; ++c) {
                            d[c] += s[c];
                        }
                    }
                }
            }
        }
    }
    return x;
}

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

inline ConstMap reshape(const Matrix& m, std::size_t rows, std::size_t cols)
{
    return ConstMap(m.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace detail

/// Bias-free convolution of one batch (used by spectral-norm power iteration).
inline Matrix conv_apply(const ParamGroup& filter, const Matrix& x)
{
    require(filter.conv.has_value(), "conv_apply: group has no conv geometry");
    const auto& g = *filter.conv;
    const auto N = static_cast<std::size_t>(x.rows());
    detail::ConstMap W(filter.values.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.patch()));
    Matrix y = detail::im2col(x, g) * W.transpose();
    return detail::reshape(y, N, g.out_size());
}

/// Adjoint of conv_apply.
inline Matrix conv_adjoint(const ParamGroup& filter, const Matrix& y)
{
    require(filter.conv.has_value(), "conv_adjoint: group has no conv geometry");
    const auto& g = *filter.conv;
    const auto N = static_cast<std::size_t>(y.rows());
    detail::ConstMap W(filter.values.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.patch()));
    Matrix dcols = detail::reshape(y, N * g.out_h() * g.out_w(), g.out_c) * W;
    return detail::col2im(dcols, N, g);
}

// ---------------------------------------------------------------------------
// Layers. Forward passes optionally record a tape; backward passes return the
// input gradient and, when `grad` is non-null, accumulate parameter gradients
// into the flat vector at the group offsets.

struct Tape {
    Matrix saved;
    std::vector<Tape> children;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Matrix forward(const ModelParameters& p, const Matrix& x, Tape* tape) const = 0;
    virtual Matrix backward(const ModelParameters& p, const Tape& tape, const Matrix& dy, Vector* grad) const = 0;
};

namespace layers {

class Dense final : public Layer {
public:
    Dense(std::size_t w, std::size_t b, std::size_t in, std::size_t out, std::size_t w_off, std::size_t b_off)
        : w_(w), b_(b), in_(in), out_(out), w_off_(w_off), b_off_(b_off)
    {
    }

    Matrix forward(const ModelParameters& p, const Matrix& x, Tape* tape) const override
    {
        require(static_cast<std::size_t>(x.cols()) == in_, "dense layer: input width mismatch");
        Matrix y = x * weight(p).transpose();
        y.rowwise() += p.groups[b_].values.transpose();
        if (tape) {
            tape->saved = x;
        }
        return y;
    }

    Matrix backward(const ModelParameters& p, const Tape& tape, const Matrix& dy, Vector* grad) const override
    {
        if (grad) {
            detail::MutMap dW(grad->data() + w_off_, static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
            dW.noalias() += dy.transpose() * tape.saved;
            grad->segment(static_cast<Eigen::Index>(b_off_), static_cast<Eigen::Index>(out_)) +=
                dy.colwise().sum().transpose();
        }
        return dy * weight(p);
    }

private:
    [[nodiscard]] detail::ConstMap weight(const ModelParameters& p) const
    {
        return detail::ConstMap(p.groups[w_].values.data(), static_cast<Eigen::Index>(out_),
                                static_cast<Eigen::Index>(in_));
    }

    std::size_t w_, b_, in_, out_, w_off_, b_off_;
};

class Conv final : public Layer {
public:
    Conv(std::size_t w, std::size_t b, ConvGeometry g, std::size_t w_off, std::size_t b_off)
        : w_(w), b_(b), g_(g), w_off_(w_off), b_off_(b_off)
    {
    }

    Matrix forward(const ModelParameters& p, const Matrix& x, Tape* tape) const override
    {
        require(static_cast<std::size_t>(x.cols()) == g_.in_size(), "conv layer: input size mismatch");
        const auto N = static_cast<std::size_t>(x.rows());
        Matrix cols = detail::im2col(x, g_);
        Matrix y = cols * weight(p).transpose();
        y.rowwise() += p.groups[b_].values.transpose();
        if (tape) {
            tape->saved = std::move(cols);
        }
        return detail::reshape(y, N, g_.out_size());
    }

    Matrix backward(const ModelParameters& p, const Tape& tape, const Matrix& dy, Vector* grad) const override
    {
        const auto N = static_cast<std::size_t>(dy.rows());
        const auto dy2 = detail::reshape(dy, N * g_.out_h() * g_.out_w(), g_.out_c);
        if (grad) {
            detail::MutMap dW(grad->data() + w_off_, static_cast<Eigen::Index>(g_.out_c),
                              static_cast<Eigen::Index>(g_.patch()));
            dW.noalias() += dy2.transpose() * tape.saved;
            grad->segment(static_cast<Eigen::Index>(b_off_), static_cast<Eigen::Index>(g_.out_c)) +=
                dy2.colwise().sum().transpose();
        }
        Matrix dcols = dy2 * weight(p);
        return detail::col2im(dcols, N, g_);
    }

private:
    [[nodiscard]] detail::ConstMap weight(const ModelParameters& p) const
    {
        return detail::ConstMap(p.groups[w_].values.data(), static_cast<Eigen::Index>(g_.out_c),
                                static_cast<Eigen::Index>(g_.patch()));
    }

    std::size_t w_, b_;
    ConvGeometry g_;
    std::size_t w_off_, b_off_;
};

class Relu final : public Layer {
public:
    Matrix forward(const ModelParameters&, const Matrix& x, Tape* tape) const override
    {
        if (tape) {
            tape->saved = x;
        }
        return x.cwiseMax(0.0);
    }

    Matrix backward(const ModelParameters&, const Tape& tape, const Matrix& dy, Vector*) const override
    {
        return (tape.saved.array() > 0.0).select(dy.array(), 0.0).matrix();
    }
};

class GlobalAvgPool final : public Layer {
public:
    GlobalAvgPool(std::size_t hw, std::size_t c) : hw_(hw), c_(c) {}

    Matrix forward(const ModelParameters&, const Matrix& x, Tape*) const override
    {
        const auto N = static_cast<std::size_t>(x.rows());
        Matrix y = Matrix::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(c_));
        for (std::size_t n = 0; n < N; ++n) {
            y.row(static_cast<Eigen::Index>(n)) =
                detail::ConstMap(x.row(static_cast<Eigen::Index>(n)).data(), static_cast<Eigen::Index>(hw_),
                                 static_cast<Eigen::Index>(c_))
                    .colwise()
                    .mean();
        }
        return y;
    }

    Matrix backward(const ModelParameters&, const Tape&, const Matrix& dy, Vector*) const override
    {
        const auto N = static_cast<std::size_t>(dy.rows());
        Matrix dx(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(hw_ * c_));
        for (std::size_t n = 0; n < N; ++n) {
            detail::MutMap(dx.row(static_cast<Eigen::Index>(n)).data(), static_cast<Eigen::Index>(hw_),
                           static_cast<Eigen::Index>(c_))
                .rowwise() = dy.row(static_cast<Eigen::Index>(n)) / static_cast<double>(hw_);
        }
        return dx;
    }

private:
    std::size_t hw_, c_;
};

class Sequential final : public Layer {
public:
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Matrix forward(const ModelParameters& p, const Matrix& x, Tape* tape) const override
    {
        if (tape) {
            tape->children.resize(layers_.size());
        }
        Matrix h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i]->forward(p, h, tape ? &tape->children[i] : nullptr);
        }
        return h;
    }

    Matrix backward(const ModelParameters& p, const Tape& tape, const Matrix& dy, Vector* grad) const override
    {
        require(tape.children.size() == layers_.size(), "backward called without a matching forward tape");
        Matrix g = dy;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            g = layers_[i]->backward(p, tape.children[i], g, grad);
        }
        return g;
    }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// out = branch(x) + shortcut(x); the shortcut is the identity when absent.
class Residual final : public Layer {
public:
    Residual(std::unique_ptr<Sequential> branch, std::unique_ptr<Sequential> shortcut)
        : branch_(std::move(branch)), shortcut_(std::move(shortcut))
    {
    }

    Matrix forward(const ModelParameters& p, const Matrix& x, Tape* tape) const override
    {
        if (tape) {
            tape->children.resize(2);
        }
        Matrix y = branch_->forward(p, x, tape ? &tape->children[0] : nullptr);
        if (shortcut_) {
            y += shortcut_->forward(p, x, tape ? &tape->children[1] : nullptr);
        } else {
            y += x;
        }
        return y;
    }

    Matrix backward(const ModelParameters& p, const Tape& tape, const Matrix& dy, Vector* grad) const override
    {
        Matrix dx = branch_->backward(p, tape.children[0], dy, grad);
        if (shortcut_) {
            dx += shortcut_->backward(p, tape.children[1], dy, grad);
        } else {
            dx += dy;
        }
        return dx;
    }

private:
    std::unique_ptr<Sequential> branch_;
    std::unique_ptr<Sequential> shortcut_;
};

}  // namespace layers

// ---------------------------------------------------------------------------
// Architecture builder.

/// How a weight group is initialised.
enum class InitKind { hidden, output };

struct GroupPlan {
    ParamGroup group;  // values left empty
    std::size_t count = 0;
    std::size_t fan_in = 1;
    InitKind init = InitKind::hidden;
};

/// Executable network for an ArchSpec. Parameters are passed to each call, so
/// one Network serves any ModelParameters with the same architecture.
class Network {
public:
    explicit Network(const ArchSpec& arch) : arch_(arch)
    {
        arch.validate();
        build();
    }

    [[nodiscard]] const std::vector<GroupPlan>& plan() const { return plan_; }
    [[nodiscard]] std::size_t weight_layer_count() const { return weight_layers_; }

    [[nodiscard]] Matrix forward(const ModelParameters& p, const Matrix& x, Tape* tape = nullptr) const
    {
        require(p.groups.size() == plan_.size(), "forward: parameters do not match architecture " + arch_.tag());
        return root_.forward(p, x, tape);
    }

    /// Backpropagates logit gradients. Returns the input gradient; accumulates
    /// parameter gradients into `grad` (flat, group order) when non-null.
    Matrix backward(const ModelParameters& p, const Tape& tape, const Matrix& dlogits, Vector* grad) const
    {
        if (grad) {
            require(static_cast<std::size_t>(grad->size()) == p.parameter_count(), "backward: gradient size mismatch");
        }
        return root_.backward(p, tape, dlogits, grad);
    }

private:
    std::size_t add_group(std::string name, ParamRole role, std::vector<std::size_t> shape, std::size_t fan_in,
                          InitKind init, std::optional<ConvGeometry> conv = std::nullopt)
    {
        GroupPlan gp;
        gp.group.name = std::move(name);
        gp.group.role = role;
        gp.group.shape = std::move(shape);
        std::size_t n = 1;
        for (auto s : gp.group.shape) {
            n *= s;
        }
        gp.count = n;
        gp.group.conv = conv;
        gp.fan_in = fan_in;
        gp.init = init;
        offsets_.push_back(total_);
        total_ += n;
        plan_.push_back(std::move(gp));
        if (is_weight(role)) {
            ++weight_layers_;
        }
        return plan_.size() - 1;
    }

    std::unique_ptr<layers::Dense> dense(const std::string& name, std::size_t in, std::size_t out, InitKind init)
    {
        const auto w = add_group(name + ".weight", ParamRole::dense, {out, in}, in, init);
        const auto b = add_group(name + ".bias", ParamRole::bias, {out}, in, init);
        return std::make_unique<layers::Dense>(w, b, in, out, offsets_[w], offsets_[b]);
    }

    std::unique_ptr<layers::Conv> conv(const std::string& name, std::size_t h, std::size_t w_, std::size_t in_c,
                                       std::size_t out_c, std::size_t kernel, std::size_t stride, std::size_t pad)
    {
        ConvGeometry g{h, w_, in_c, out_c, kernel, stride, pad};
        const auto w = add_group(name + ".weight", ParamRole::conv_filter, {out_c, kernel, kernel, in_c}, g.patch(),
                                 InitKind::hidden, g);
        const auto b = add_group(name + ".bias", ParamRole::bias, {out_c}, g.patch(), InitKind::hidden);
        return std::make_unique<layers::Conv>(w, b, g, offsets_[w], offsets_[b]);
    }

    void build()
    {
        const auto C = static_cast<std::size_t>(arch_.class_count);
        const auto& s = arch_.input_shape;
        switch (arch_.family) {
        case Family::linear:
            root_.add(dense("dense0", s.size(), C, InitKind::output));
            break;
        case Family::mlp: {
            std::size_t in = s.size();
            for (std::size_t i = 0; i < arch_.widths.size(); ++i) {
                root_.add(dense("dense" + std::to_string(i), in, arch_.widths[i], InitKind::hidden));
                root_.add(std::make_unique<layers::Relu>());
                in = arch_.widths[i];
            }
            root_.add(dense("dense" + std::to_string(arch_.widths.size()), in, C, InitKind::output));
            break;
        }
        case Family::convnet: {
            std::size_t h = s.height(), w = s.width(), c = s.channels();
            for (std::size_t i = 0; i < arch_.widths.size(); ++i) {
                const std::size_t stride = (i % 2 == 1 && h > 1 && w > 1) ? 2 : 1;
                auto layer = conv("conv" + std::to_string(i), h, w, c, arch_.widths[i], 3, stride, 1);
                ConvGeometry g{h, w, c, arch_.widths[i], 3, stride, 1};
                h = g.out_h();
                w = g.out_w();
                c = arch_.widths[i];
                root_.add(std::move(layer));
                root_.add(std::make_unique<layers::Relu>());
            }
            root_.add(dense("dense0", h * w * c, C, InitKind::output));
            break;
        }
        case Family::resnet_small: {
            std::size_t h = s.height(), w = s.width(), c = s.channels();
            root_.add(conv("stem", h, w, c, arch_.widths[0], 3, 1, 1));
            root_.add(std::make_unique<layers::Relu>());
            c = arch_.widths[0];
            for (std::size_t i = 1; i < arch_.widths.size(); ++i) {
                const std::size_t out_c = arch_.widths[i];
                const std::size_t stride = (i >= 2 && h > 1 && w > 1) ? 2 : 1;
                const std::string name = "block" + std::to_string(i);
                auto branch = std::make_unique<layers::Sequential>();
                branch->add(conv(name + ".conv_a", h, w, c, out_c, 3, stride, 1));
                ConvGeometry ga{h, w, c, out_c, 3, stride, 1};
                branch->add(std::make_unique<layers::Relu>());
                branch->add(conv(name + ".conv_b", ga.out_h(), ga.out_w(), out_c, out_c, 3, 1, 1));
                std::unique_ptr<layers::Sequential> shortcut;
                if (stride != 1 || out_c != c) {
                    shortcut = std::make_unique<layers::Sequential>();
                    shortcut->add(conv(name + ".proj", h, w, c, out_c, 1, stride, 0));
                }
                root_.add(std::make_unique<layers::Residual>(std::move(branch), std::move(shortcut)));
                root_.add(std::make_unique<layers::Relu>());
                h = ga.out_h();
                w = ga.out_w();
                c = out_c;
            }
            root_.add(std::make_unique<layers::GlobalAvgPool>(h * w, c));
            root_.add(dense("dense0", c, C, InitKind::output));
            break;
        }
        }
    }

    ArchSpec arch_;
    layers::Sequential root_;
    std::vector<GroupPlan> plan_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
    std::size_t weight_layers_ = 0;
};

/// Deterministic initialisation: uniform(-b, b) weights with b = sqrt(6/fan_in)
/// for layers feeding a rectifier and b = 1/sqrt(fan_in) for the output layer;
/// zero biases.
inline ModelParameters init_model(const ArchSpec& spec)
{
    Network net(spec);
    ModelParameters p;
    p.arch = spec;
    p.arch_tag = spec.tag();
    p.layer_count = net.weight_layer_count();
    Rng rng(derive_seed(spec.init_seed, {stream::init}));
    for (const auto& gp : net.plan()) {
        ParamGroup g = gp.group;
        g.values = Vector::Zero(static_cast<Eigen::Index>(gp.count));
        if (is_weight(g.role)) {
            const double fan = static_cast<double>(gp.fan_in);
            const double bound = gp.init == InitKind::hidden ? std::sqrt(6.0 / fan) : 1.0 / std::sqrt(fan);
            for (Eigen::Index i = 0; i < g.values.size(); ++i) {
                g.values[i] = rng.uniform(-bound, bound);
            }
        }
        p.groups.push_back(std::move(g));
    }
    return p;
}

/// Model with every parameter set to zero (same structure as init_model).
inline ModelParameters zero_model(const ArchSpec& spec)
{
    auto p = init_model(spec);
    for (auto& g : p.groups) {
        g.values.setZero();
    }
    return p;
}

inline Matrix softmax_rows(const Matrix& logits)
{
    Matrix p = logits;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        auto row = p.row(i);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    return p;
}

inline Matrix log_softmax_rows(const Matrix& logits)
{
    Matrix out = logits;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        const double m = row.maxCoeff();
        const double lse = m + std::log((row.array() - m).exp().sum());
        row.array() -= lse;
    }
    return out;
}

inline Matrix forward_logits(const ModelParameters& params, const Matrix& inputs)
{
    require(static_cast<std::size_t>(inputs.cols()) == params.arch.input_shape.size(),
            "forward_logits: input width " + std::to_string(inputs.cols()) + " does not match architecture " +
                params.arch_tag);
    return Network(params.arch).forward(params, inputs);
}

inline Matrix forward_probs(const ModelParameters& params, const Matrix& inputs)
{
    return softmax_rows(forward_logits(params, inputs));
}

inline std::vector<int> predict(const ModelParameters& params, const Matrix& inputs)
{
    const Matrix logits = forward_logits(params, inputs);
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

/// Per-group array view with its l1 and l2 norms.
struct GroupView {
    std::string name;
    ParamRole role;
    std::vector<std::size_t> shape;
    const Vector* values;
    double l1;
    double l2;
};

inline std::vector<GroupView> param_group_views(const ModelParameters& params)
{
    std::vector<GroupView> views;
    for (const auto& g : params.groups) {
        views.push_back(GroupView{g.name, g.role, g.shape, &g.values, g.values.lpNorm<1>(), g.values.norm()});
    }
    return views;
}

}  // namespace advmem
