#include "pcsa/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "pcsa/metrics.hpp"
#include "pcsa/ops.hpp"
#include "pcsa/tape.hpp"

namespace pcsa {

void TrainConfig::validate() const {
    if (!(lr_min > 0.0 && lr_min <= lr0)) throw std::invalid_argument("learning rates must satisfy 0 < lr_min <= lr0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must be in [0,1)");
    }
    if (batch == 0) throw std::invalid_argument("batch must be positive");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    if (clip_norm <= 0.0) throw std::invalid_argument("clip_norm must be positive");
}

double cosine_lr(std::size_t t, std::size_t total, const TrainConfig& cfg) {
    if (total == 0) return cfg.lr0;
    const double frac = static_cast<double>(std::min(t, total)) / static_cast<double>(total);
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParamStore<T>& params) {
    AdamState s;
    for (const auto& [name, t] : params) {
        s.m.add(name, Tensor<T>::zeros(t.shape()));
        s.v.add(name, Tensor<T>::zeros(t.shape()));
    }
    return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const TrainConfig& cfg) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, p] : params) {
        auto m = state.m.get(name).data();
        auto v = state.v.get(name).data();
        auto values = p.data();
        const bool has = p.has_grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            values[i] = static_cast<T>(static_cast<double>(values[i]) - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

template <typename T>
double clip_grad_norm(ParamStore<T>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (T& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * s);
        }
    }
    return norm;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParamStore<float>&, AdamState<float>&, double, const TrainConfig&);
template void adam_step(ParamStore<double>&, AdamState<double>&, double, const TrainConfig&);
template double clip_grad_norm(ParamStore<float>&, double);
template double clip_grad_norm(ParamStore<double>&, double);

// ---------------------------------------------------------------------------

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t iteration, std::size_t batch,
                                       std::size_t dataset_size) {
    if (dataset_size == 0) throw std::invalid_argument("batch_indices: empty dataset");
    std::vector<std::size_t> out;
    out.reserve(batch);
    std::size_t cached_epoch = static_cast<std::size_t>(-1);
    std::vector<std::size_t> perm(dataset_size);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t pos = iteration * batch + b;
        const std::size_t epoch = pos / dataset_size;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            Rng rng(derive_seed(seed ^ 0x5348554646ULL, epoch));
            for (std::size_t i = dataset_size - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % dataset_size]);
    }
    return out;
}

TensorF stack_images(const std::vector<const TensorF*>& images) {
    if (images.empty()) throw ShapeError("stack_images: no images");
    const Shape& s = images.front()->shape();
    if (s.size() != 3) throw ShapeError("stack_images: images must be [C,H,W], got " + shape_str(s));
    TensorF out({static_cast<std::int64_t>(images.size()), s[0], s[1], s[2]});
    const std::size_t n = images.front()->numel();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->shape() != s) {
            throw ShapeError("stack_images: image " + std::to_string(i) + " is " + shape_str(images[i]->shape()) +
                             ", expected " + shape_str(s));
        }
        std::copy_n(images[i]->ptr(), n, out.ptr() + i * n);
    }
    return out;
}

Trainer::Trainer(TrainConfig cfg, NetworkConfig net_cfg, std::vector<ImagePair> data)
    : Trainer(cfg, net_cfg, std::move(data), init_params<float>(net_cfg, cfg.seed), AdamState<float>{}) {}

Trainer::Trainer(TrainConfig cfg, NetworkConfig net_cfg, std::vector<ImagePair> data, ParamStore<float> params,
                 AdamState<float> adam)
    : cfg_(cfg),
      net_cfg_(net_cfg),
      data_(std::move(data)),
      params_(std::move(params)),
      adam_(std::move(adam)),
      extractor_(CrExtractor<float>::make()) {
    cfg_.validate();
    net_cfg_.validate();
    if (data_.empty()) throw std::invalid_argument("training dataset is empty");
    for (const auto& p : data_) {
        if (p.hazy.dim(1) % 4 != 0 || p.hazy.dim(2) % 4 != 0) {
            throw std::invalid_argument("training image " + p.name + " is " + shape_str(p.hazy.shape()) +
                                        "; H and W must be divisible by 4");
        }
    }
    if (adam_.m.size() == 0) adam_ = AdamState<float>::zeros_like(params_);
}

IterationRecord Trainer::step() {
    const std::size_t it = iteration();
    const auto idx = batch_indices(cfg_.seed, it, cfg_.batch, data_.size());
    std::vector<const TensorF*> hazy_ptrs, clear_ptrs;
    for (std::size_t i : idx) {
        hazy_ptrs.push_back(&data_[i].hazy);
        clear_ptrs.push_back(&data_[i].clear);
    }
    const TensorF hazy = stack_images(hazy_ptrs);
    const TensorF clear = stack_images(clear_ptrs);

    LossConfig loss_cfg;
    loss_cfg.lambda_cr = cfg_.lambda;

    IterationRecord rec;
    rec.iteration = it;
    rec.lr = cosine_lr(it, cfg_.iterations, cfg_);
    params_.zero_grad();
    params_.set_requires_grad(true);
    try {
        Tape tape;
        const TensorF pred = net_forward(hazy, params_, net_cfg_);
        const TensorF loss = total_loss(pred, clear, hazy, extractor_, loss_cfg);
        rec.loss = static_cast<double>(loss.item());
        tape.backward(loss);
    } catch (const NonFiniteError& e) {
        throw TrainingError("non-finite value at iteration " + std::to_string(it) + ": first produced by op '" +
                            e.op() + "'");
    }
    rec.grad_norm = clip_grad_norm(params_, cfg_.clip_norm);
    if (!std::isfinite(rec.grad_norm)) {
        throw TrainingError("non-finite gradient norm at iteration " + std::to_string(it));
    }
    adam_step(params_, adam_, rec.lr, cfg_);
    params_.zero_grad();
    history_.push_back(rec);
    return rec;
}

void Trainer::run(const std::function<void(const IterationRecord&)>& on_step) {
    while (iteration() < cfg_.iterations) {
        const auto rec = step();
        if (on_step) on_step(rec);
    }
}

TensorF dehaze_image(const TensorF& hazy, ParamStore<float>& params, const NetworkConfig& cfg) {
    NoGradGuard no_grad;
    if (hazy.rank() != 3) throw ShapeError("dehaze_image: expected [C,H,W], got " + shape_str(hazy.shape()));
    const TensorF batch = hazy.reshaped_copy({1, hazy.dim(0), hazy.dim(1), hazy.dim(2)});
    TensorF out = net_forward(batch, params, cfg).reshaped_copy(hazy.shape());
    for (float& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

EvalSummary evaluate(const std::vector<ImagePair>& pairs, ParamStore<float>& params, const NetworkConfig& cfg) {
    EvalSummary s;
    for (const auto& p : pairs) {
        const TensorF out = dehaze_image(p.hazy, params, cfg);
        EvalRow r;
        r.name = p.name;
        r.psnr_hazy = psnr(p.hazy, p.clear);
        r.psnr_dehazed = psnr(out, p.clear);
        r.ssim_hazy = ssim(p.hazy, p.clear);
        r.ssim_dehazed = ssim(out, p.clear);
        s.mean_psnr_hazy += r.psnr_hazy;
        s.mean_psnr_dehazed += r.psnr_dehazed;
        s.mean_ssim_hazy += r.ssim_hazy;
        s.mean_ssim_dehazed += r.ssim_dehazed;
        s.rows.push_back(std::move(r));
    }
    if (!pairs.empty()) {
        const double n = static_cast<double>(pairs.size());
        s.mean_psnr_hazy /= n;
        s.mean_psnr_dehazed /= n;
        s.mean_ssim_hazy /= n;
        s.mean_ssim_dehazed /= n;
    }
    return s;
}

TrainReport train_loop(const TrainConfig& cfg, const NetworkConfig& net_cfg, std::vector<ImagePair> dataset) {
    Trainer trainer(cfg, net_cfg, std::move(dataset));
    trainer.run();
    return TrainReport{trainer.history(), trainer.params(), trainer.adam()};
}

std::vector<ImagePair> to_image_pairs(const std::vector<HazePair>& pairs) {
    std::vector<ImagePair> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out.push_back(ImagePair{pairs[i].hazy, pairs[i].clear, "pair_" + std::to_string(i)});
    }
    return out;
}

}  // namespace pcsa
