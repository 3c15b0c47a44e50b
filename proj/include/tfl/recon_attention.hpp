#pragma once

// Reconstruction-driven abnormal attention: a convolutional autoencoder trained on genuine
// items, a sample-level tamper classifier on its latent code, and a transformer block whose
// attention compares original features (queries, values) against their reconstruction (keys).

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfl/autograd.hpp"
#include "tfl/nn.hpp"
#include "tfl/params.hpp"

namespace tfl::recon {

using ag::Var;

struct DcaeConfig {
    int input_channels = 0;
    int latent_channels = 0;  // 0: input_channels / 2
    int num_levels = 2;       // stride-2 stages
    int kernel_size = 3;
    double negative_slope = 0.01;
    double norm_eps = 1e-5;

    int latent() const { return latent_channels > 0 ? latent_channels : std::max(1, input_channels / 2); }
    void validate() const;
};

struct CraConfig {
    int model_dim = 0;       // 0: same as the input channel count
    int num_heads = 4;
    int ffn_hidden_dim = 64;
    int scale_channels = 0;  // C in the 1/sqrt(C) attention scale; 0: input channel count

    void validate(int input_channels) const;
    int dim(int input_channels) const { return model_dim > 0 ? model_dim : input_channels; }
    int scale_c(int input_channels) const { return scale_channels > 0 ? scale_channels : input_channels; }
};

struct TfaaConfig {
    DcaeConfig dcae;
    CraConfig cra;
    int classifier_hidden = 16;
};

TfaaConfig tfaa_config_from_json(const nlohmann::json& j, int input_channels);
nlohmann::json to_json(const TfaaConfig& cfg);

class Dcae {
public:
    explicit Dcae(DcaeConfig cfg, std::string prefix = "tfaa.dcae");

    void init(ParamStore& store, Rng& rng) const;
    // C x T -> C_z x T / 2^L. Stages: strided conv, leaky activation, instance norm (the last
    // stage keeps its activation un-normalized so the pooled latent stays informative).
    Var encode(Binder& bind, Var features) const;
    // C_z x T / 2^L -> C x T. The final stage is a plain transposed convolution.
    Var decode(Binder& bind, Var latent) const;
    const DcaeConfig& config() const { return cfg_; }

private:
    DcaeConfig cfg_;
    std::string prefix_;
};

// Average-pools the latent over time, then two affine layers with a ReLU between; returns
// the tamper logit (1 x 1).
class SampleClassifier {
public:
    SampleClassifier(int latent_channels, int hidden, std::string prefix = "tfaa.scls");
    void init(ParamStore& store, Rng& rng) const;
    Var logit(Binder& bind, Var latent) const;
    Var probability(Binder& bind, Var latent) const { return ag::sigmoid(logit(bind, latent)); }

private:
    int latent_;
    int hidden_;
    std::string prefix_;
};

// Element-mean absolute difference for one item (1 x 1).
Var reconstruction_error(Var features, Var reconstruction);

// Mean of reconstruction_error over items flagged real; a gradient-free 0 when none are.
Var reconstruction_loss(std::span<const Var> features, std::span<const Var> reconstructions,
                        const std::vector<bool>& real_mask);

// -alpha * (1 - p_t)^gamma * log(p_t), p_t the probability of the labelled class with
// p_tampered clamped to [eps, 1 - eps].
double sample_focal_loss(double p_tampered, int label, double alpha, double gamma, double eps = 1e-7);

// Single-head cross-reconstruction attention. q, k, v: D x T. Correlation q^T k scaled by
// 1/sqrt(channel_dim), row softmax, each output position mixes value columns with its row.
Var cra_attention(Var q, Var k, Var v, int channel_dim);

class CraTransBlock {
public:
    CraTransBlock(int input_channels, CraConfig cfg, std::string prefix = "tfaa.cra");

    void init(ParamStore& store, Rng& rng) const;
    // features, reconstruction: C x T -> D x T.
    Var operator()(Binder& bind, Var features, Var reconstruction) const;
    int output_dim() const { return cfg_.dim(input_channels_); }

private:
    int input_channels_;
    CraConfig cfg_;
    std::string prefix_;
};

struct TfaaOutput {
    Var enhanced;        // D x T
    Var reconstruction;  // C x T
    Var latent;          // C_z x T / 2^L
    Var sample_logit;    // 1 x 1
};

class TfaaModule {
public:
    explicit TfaaModule(TfaaConfig cfg);
    void init(ParamStore& store, Rng& rng) const;
    TfaaOutput operator()(Binder& bind, Var features) const;
    int output_dim() const { return cra_.output_dim(); }
    const TfaaConfig& config() const { return cfg_; }

private:
    TfaaConfig cfg_;
    Dcae dcae_;
    SampleClassifier classifier_;
    CraTransBlock cra_;
};

}  // namespace tfl::recon
