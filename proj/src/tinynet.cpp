#include "ucms/tinynet.hpp"

#include "ucms/errors.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace ucms::nn {

static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian");

namespace {

Matrix activate(const Matrix& z, Activation a) {
    switch (a) {
    case Activation::Identity:
        return z;
    case Activation::Relu:
        return z.cwiseMax(0.0);
    case Activation::Sigmoid:
        return (1.0 + (-z.array()).exp()).inverse().matrix();
    }
    return z;
}

// dL/dz from dL/da and the post-activation value a.
Matrix activation_grad(const Matrix& upstream, const Matrix& a, Activation act) {
    switch (act) {
    case Activation::Identity:
        return upstream;
    case Activation::Relu:
        return (a.array() > 0.0).select(upstream, 0.0);
    case Activation::Sigmoid:
        return (upstream.array() * a.array() * (1.0 - a.array())).matrix();
    }
    return upstream;
}

} // namespace

std::string to_string(Activation a) {
    switch (a) {
    case Activation::Identity:
        return "identity";
    case Activation::Relu:
        return "relu";
    case Activation::Sigmoid:
        return "sigmoid";
    }
    return "identity";
}

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::Relu;
    if (name == "sigmoid") return Activation::Sigmoid;
    throw StructuralError("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<int> widths, Activation hidden, Activation output)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
    if (widths_.size() < 2) {
        throw StructuralError("Mlp: need at least input and output widths");
    }
    for (int w : widths_) {
        if (w <= 0) {
            throw StructuralError("Mlp: widths must be positive");
        }
    }
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        layers_.push_back({Matrix::Zero(widths_[i + 1], widths_[i]), Vector::Zero(widths_[i + 1])});
    }
}

Mlp::Mlp(std::vector<int> widths, Activation hidden, Activation output, Rng& rng)
    : Mlp(std::move(widths), hidden, output) {
    for (auto& layer : layers_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        // Column-major fill keeps the draw order fixed for a given shape.
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
                layer.weight(r, c) = dist(rng);
            }
        }
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
            layer.bias(r) = dist(rng);
        }
    }
}

Mlp Mlp::zeros(std::vector<int> widths, Activation hidden, Activation output) {
    return Mlp(std::move(widths), hidden, output);
}

void Mlp::check_input(Eigen::Index rows) const {
    if (rows != input_size()) {
        throw StructuralError("Mlp: input has " + std::to_string(rows) + " rows, expected " +
                              std::to_string(input_size()));
    }
}

Vector Mlp::forward(const Vector& input) const {
    return forward(Matrix(input)).col(0);
}

Matrix Mlp::forward(const Matrix& batch) const {
    check_input(batch.rows());
    ++forward_calls_;
    Matrix a = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Matrix z = layers_[i].weight * a;
        z.colwise() += layers_[i].bias;
        a = activate(z, i + 1 == layers_.size() ? output_ : hidden_);
    }
    return a;
}

Tape Mlp::forward_tape(const Matrix& batch) const {
    check_input(batch.rows());
    ++forward_calls_;
    Tape tape;
    tape.values.reserve(layers_.size() + 1);
    tape.values.push_back(batch);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Matrix z = layers_[i].weight * tape.values.back();
        z.colwise() += layers_[i].bias;
        tape.values.push_back(activate(z, i + 1 == layers_.size() ? output_ : hidden_));
    }
    return tape;
}

Params Mlp::backward(const Tape& tape, const Matrix& upstream, Matrix* input_grad) const {
    if (tape.values.size() != layers_.size() + 1) {
        throw StructuralError("Mlp::backward: tape does not match network depth");
    }
    if (upstream.rows() != output_size() || upstream.cols() != tape.output().cols()) {
        throw StructuralError("Mlp::backward: upstream gradient has wrong shape");
    }
    Params grads(layers_.size());
    Matrix delta = upstream;
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const Activation act = k + 1 == layers_.size() ? output_ : hidden_;
        const Matrix dz = activation_grad(delta, tape.values[k + 1], act);
        grads[k].weight.noalias() = dz * tape.values[k].transpose();
        grads[k].bias = dz.rowwise().sum();
        if (k > 0 || input_grad != nullptr) {
            delta.noalias() = layers_[k].weight.transpose() * dz;
        }
    }
    if (input_grad != nullptr) {
        *input_grad = std::move(delta);
    }
    return grads;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    }
    return n;
}

bool Mlp::all_finite() const { return nn::all_finite(layers_); }

Params zeros_like(const Params& p) {
    Params out;
    out.reserve(p.size());
    for (const auto& l : p) {
        out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    return out;
}

bool same_shape(const Params& a, const Params& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols() ||
            a[i].bias.size() != b[i].bias.size()) {
            return false;
        }
    }
    return true;
}

bool all_finite(const Params& p) {
    for (const auto& l : p) {
        if (!l.weight.allFinite() || !l.bias.allFinite()) {
            return false;
        }
    }
    return true;
}

double squared_norm(const Params& p) {
    double s = 0.0;
    for (const auto& l : p) {
        s += l.weight.squaredNorm() + l.bias.squaredNorm();
    }
    return s;
}

Adam::Adam(const Mlp& net, AdamConfig cfg)
    : cfg_(cfg), m_(zeros_like(net.params())), v_(zeros_like(net.params())) {}

void Adam::step(Mlp& net, const Params& grads) {
    auto& params = net.params();
    if (!same_shape(params, grads) || !same_shape(params, m_)) {
        throw StructuralError("Adam::step: gradient shape does not match parameters");
    }
    if (!all_finite(grads)) {
        throw TrainingError("Adam::step: non-finite gradient");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const double lr = cfg_.learning_rate;
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double eps = cfg_.epsilon;

    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        update(params[i].weight, grads[i].weight, m_[i].weight, v_[i].weight);
        update(params[i].bias, grads[i].bias, m_[i].bias, v_[i].bias);
    }
}

void soft_update(Mlp& target, const Mlp& online, double omega) {
    if (!(omega > 0.0 && omega <= 1.0)) {
        throw StructuralError("soft_update: omega must lie in (0, 1]");
    }
    if (!same_shape(target.params(), online.params())) {
        throw StructuralError("soft_update: target and online shapes differ");
    }
    auto& t = target.params();
    const auto& o = online.params();
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (omega == 1.0) {
            t[i] = o[i];
            continue;
        }
        t[i].weight = omega * o[i].weight + (1.0 - omega) * t[i].weight;
        t[i].bias = omega * o[i].bias + (1.0 - omega) * t[i].bias;
    }
}

// --- checkpoints -------------------------------------------------------------

void save_checkpoint(std::ostream& out, const std::vector<NamedNet>& nets) {
    nlohmann::json header;
    header["format"] = "ucms-checkpoint";
    header["version"] = kCheckpointVersion;
    header["networks"] = nlohmann::json::array();
    std::size_t total = 0;
    for (const auto& n : nets) {
        header["networks"].push_back({{"name", n.name},
                                      {"widths", n.net->widths()},
                                      {"hidden", to_string(n.net->hidden_activation())},
                                      {"output", to_string(n.net->output_activation())}});
        total += n.net->parameter_count();
    }
    header["parameters"] = total;
    out << header.dump() << '\n';
    for (const auto& n : nets) {
        for (const auto& l : n.net->params()) {
            out.write(reinterpret_cast<const char*>(l.weight.data()),
                      static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
            out.write(reinterpret_cast<const char*>(l.bias.data()),
                      static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
        }
    }
    if (!out) {
        throw std::runtime_error("save_checkpoint: write failed");
    }
}

void save_checkpoint(const std::string& path, const std::vector<NamedNet>& nets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("save_checkpoint: cannot open " + path);
    }
    save_checkpoint(out, nets);
}

std::vector<LoadedNet> load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw StructuralError("load_checkpoint: missing header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw StructuralError(std::string("load_checkpoint: bad header: ") + e.what());
    }
    if (header.value("format", "") != "ucms-checkpoint") {
        throw StructuralError("load_checkpoint: not a checkpoint file");
    }
    if (header.value("version", 0) != kCheckpointVersion) {
        throw StructuralError("load_checkpoint: unsupported version");
    }
    std::vector<LoadedNet> out;
    for (const auto& desc : header.at("networks")) {
        LoadedNet ln;
        ln.name = desc.at("name").get<std::string>();
        ln.net = Mlp::zeros(desc.at("widths").get<std::vector<int>>(),
                            activation_from_string(desc.at("hidden").get<std::string>()),
                            activation_from_string(desc.at("output").get<std::string>()));
        for (auto& l : ln.net.params()) {
            in.read(reinterpret_cast<char*>(l.weight.data()),
                    static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
            in.read(reinterpret_cast<char*>(l.bias.data()),
                    static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
        }
        if (!in) {
            throw StructuralError("load_checkpoint: truncated parameter block");
        }
        out.push_back(std::move(ln));
    }
    return out;
}

std::vector<LoadedNet> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_checkpoint: cannot open " + path);
    }
    return load_checkpoint(in);
}

} // namespace ucms::nn
