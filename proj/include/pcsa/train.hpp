#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcsa/data.hpp"
#include "pcsa/losses.hpp"
#include "pcsa/network.hpp"
#include "pcsa/params.hpp"

namespace pcsa {

struct TrainConfig {
    double lr0 = 1.5e-4;
    double lr_min = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch = 8;
    std::size_t iterations = 500;
    double lambda = 0.2;
    /// Persisted for completeness; no loss term uses it.
    double gamma = 0.25;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// lr_min + (lr0 - lr_min) * (1 + cos(pi * t / total)) / 2.
double cosine_lr(std::size_t t, std::size_t total, const TrainConfig& cfg);

template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    ParamStore<T> m;
    ParamStore<T> v;

    static AdamState zeros_like(const ParamStore<T>& params);
};

/// Bias-corrected Adam update in parameter-store order. Parameters without
/// an accumulated gradient are treated as having a zero gradient.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const TrainConfig& cfg);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& params, double max_norm);

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct IterationRecord {
    std::size_t iteration = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
};

/// Dataset indices used at a given iteration: consecutive slices of a
/// seeded per-epoch permutation. Pure in (seed, iteration).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t iteration, std::size_t batch,
                                       std::size_t dataset_size);

/// Stacks images ([C,H,W] each) into [N,C,H,W].
TensorF stack_images(const std::vector<const TensorF*>& images);

class Trainer {
public:
    Trainer(TrainConfig cfg, NetworkConfig net_cfg, std::vector<ImagePair> data);
    /// Resumes from saved parameters and optimizer moments.
    Trainer(TrainConfig cfg, NetworkConfig net_cfg, std::vector<ImagePair> data, ParamStore<float> params,
            AdamState<float> adam);

    /// One optimization step: batch, forward, loss, backward, clip, Adam.
    IterationRecord step();
    /// Steps until iterations() is reached.
    void run(const std::function<void(const IterationRecord&)>& on_step = {});

    std::size_t iteration() const { return static_cast<std::size_t>(adam_.step); }
    const std::vector<IterationRecord>& history() const { return history_; }
    ParamStore<float>& params() { return params_; }
    const AdamState<float>& adam() const { return adam_; }
    const TrainConfig& config() const { return cfg_; }
    const NetworkConfig& net_config() const { return net_cfg_; }

private:
    TrainConfig cfg_;
    NetworkConfig net_cfg_;
    std::vector<ImagePair> data_;
    ParamStore<float> params_;
    AdamState<float> adam_;
    CrExtractor<float> extractor_;
    std::vector<IterationRecord> history_;
};

struct EvalRow {
    std::string name;
    double psnr_hazy = 0.0;
    double psnr_dehazed = 0.0;
    double ssim_hazy = 0.0;
    double ssim_dehazed = 0.0;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    double mean_psnr_hazy = 0.0;
    double mean_psnr_dehazed = 0.0;
    double mean_ssim_hazy = 0.0;
    double mean_ssim_dehazed = 0.0;
};

/// Runs the network (without recording) on a single [3,H,W] image and clamps
/// the result to [0,1].
TensorF dehaze_image(const TensorF& hazy, ParamStore<float>& params, const NetworkConfig& cfg);

/// Dehazes every pair and scores both the network output and the hazy input
/// against the clear image.
EvalSummary evaluate(const std::vector<ImagePair>& pairs, ParamStore<float>& params, const NetworkConfig& cfg);

struct TrainReport {
    std::vector<IterationRecord> curve;
    ParamStore<float> params;
    AdamState<float> adam;
};

TrainReport train_loop(const TrainConfig& cfg, const NetworkConfig& net_cfg, std::vector<ImagePair> dataset);

/// Converts synthesized pairs into evaluation/training pairs.
std::vector<ImagePair> to_image_pairs(const std::vector<HazePair>& pairs);

}  // namespace pcsa
