#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace ucms::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class Activation { Identity, Relu, Sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// One dense layer; also used as a parameter-shaped gradient/moment holder.
// weight is (out x in).
struct Layer {
    Matrix weight;
    Vector bias;
};

using Params = std::vector<Layer>;

// Intermediate values of a batched forward pass. values[0] is the input and
// values[i + 1] the post-activation output of layer i. Samples are columns.
struct Tape {
    std::vector<Matrix> values;

    const Matrix& output() const { return values.back(); }
};

// Fully connected network with one activation for hidden layers and one for
// the output layer.
class Mlp {
public:
    Mlp() = default;

    // Weights and biases drawn uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Mlp(std::vector<int> widths, Activation hidden, Activation output, Rng& rng);

    static Mlp zeros(std::vector<int> widths, Activation hidden, Activation output);

    int input_size() const { return widths_.front(); }
    int output_size() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    Activation hidden_activation() const { return hidden_; }
    Activation output_activation() const { return output_; }

    Vector forward(const Vector& input) const;
    Matrix forward(const Matrix& batch) const;
    Tape forward_tape(const Matrix& batch) const;

    // Gradients of a loss with respect to every parameter, given dL/d(output)
    // for the batch recorded in `tape`. Writes dL/d(input) when requested.
    Params backward(const Tape& tape, const Matrix& upstream, Matrix* input_grad = nullptr) const;

    Params& params() { return layers_; }
    const Params& params() const { return layers_; }
    std::size_t parameter_count() const;
    bool all_finite() const;

    // Number of forward evaluations performed; lets tests check which
    // networks a computation touched.
    std::uint64_t forward_count() const { return forward_calls_; }

private:
    Mlp(std::vector<int> widths, Activation hidden, Activation output);
    void check_input(Eigen::Index rows) const;

    std::vector<int> widths_;
    Activation hidden_ = Activation::Relu;
    Activation output_ = Activation::Identity;
    Params layers_;
    mutable std::uint64_t forward_calls_ = 0;
};

Params zeros_like(const Params& p);
bool same_shape(const Params& a, const Params& b);
bool all_finite(const Params& p);
double squared_norm(const Params& p);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(const Mlp& net, AdamConfig cfg);

    // Bias-corrected Adam descent step. Throws TrainingError on non-finite
    // gradients, leaving the parameters untouched.
    void step(Mlp& net, const Params& grads);

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return cfg_; }
    const Params& first_moment() const { return m_; }
    const Params& second_moment() const { return v_; }

private:
    AdamConfig cfg_;
    Params m_;
    Params v_;
    std::int64_t step_ = 0;
};

// target <- omega * online + (1 - omega) * target
void soft_update(Mlp& target, const Mlp& online, double omega);

struct NamedNet {
    std::string name;
    const Mlp* net = nullptr;
};

// Checkpoint layout: one line of JSON describing every network (name,
// widths, activations) followed by the raw little-endian float64 parameters
// in header order, each layer as column-major weight then bias.
void save_checkpoint(std::ostream& out, const std::vector<NamedNet>& nets);
void save_checkpoint(const std::string& path, const std::vector<NamedNet>& nets);

struct LoadedNet {
    std::string name;
    Mlp net;
};
std::vector<LoadedNet> load_checkpoint(std::istream& in);
std::vector<LoadedNet> load_checkpoint(const std::string& path);

inline constexpr int kCheckpointVersion = 1;

} // namespace ucms::nn
