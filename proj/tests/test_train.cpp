#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "pcsa/checkpoint.hpp"
#include "pcsa/data.hpp"
#include "pcsa/ops.hpp"
#include "pcsa/tape.hpp"
#include "pcsa/train.hpp"

using namespace pcsa;
namespace fs = std::filesystem;

namespace {

std::vector<ImagePair> small_data(std::size_t count = 12, std::int64_t size = 16) {
    DatasetSpec spec;
    spec.count = count;
    spec.height = size;
    spec.width = size;
    return to_image_pairs(generate_dataset(spec));
}

NetworkConfig tiny_net() {
    NetworkConfig n;
    n.base_channels = 4;
    return n;
}

TrainConfig small_cfg(std::size_t iters) {
    TrainConfig c;
    c.iterations = iters;
    c.batch = 4;
    c.seed = 11;
    return c;
}

bool same_store(const ParamStore<float>& a, const ParamStore<float>& b) {
    if (a.names() != b.names()) return false;
    for (const auto& [name, t] : a) {
        if (!same_values(t, b.get(name))) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
    TrainConfig c;
    CHECK(std::abs(cosine_lr(0, 500, c) - c.lr0) <= 1e-18);
    CHECK(std::abs(cosine_lr(500, 500, c) - c.lr_min) <= 1e-18);
    CHECK(std::abs(cosine_lr(250, 500, c) - 0.5 * (c.lr0 + c.lr_min)) <= 1e-15);
    CHECK(cosine_lr(900, 500, c) == cosine_lr(500, 500, c));
}

TEST_CASE("Adam follows the bias-corrected recurrence") {
    // Three steps on f(w) = sum(w^2), rolled out by hand.
    TrainConfig cfg;
    const double lr = 0.1;
    ParamStore<double> params;
    params.add("w", TensorD({2}, std::vector<double>{1.0, -3.0}));
    auto state = AdamState<double>::zeros_like(params);

    std::vector<double> w{1.0, -3.0}, m(2, 0.0), v(2, 0.0);
    for (int t = 1; t <= 3; ++t) {
        params.zero_grad();
        params.set_requires_grad(true);
        {
            Tape tape;
            const TensorD& p = params.get("w");
            tape.backward(sum(mul(p, p)));
        }
        adam_step(params, state, lr, cfg);
        for (std::size_t i = 0; i < 2; ++i) {
            const double g = 2.0 * w[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1.0 - std::pow(0.9, t));
            const double vh = v[i] / (1.0 - std::pow(0.999, t));
            w[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
        }
        for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(params.get("w").data()[i] - w[i]) <= 1e-10);
    }
    CHECK(state.step == 3);
}

TEST_CASE("global norm clipping") {
    ParamStore<double> params;
    params.add("a", TensorD({2}, std::vector<double>{3.0, 0.0}));
    params.add("b", TensorD({1}, std::vector<double>{4.0}));
    params.set_requires_grad(true);
    {
        Tape tape;
        tape.backward(add(sum(mul(params.get("a"), params.get("a"))), sum(mul(params.get("b"), params.get("b")))));
    }
    // grads (6, 0) and (8): norm 10
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(10.0));
    CHECK(params.get("a").grad()[0] == doctest::Approx(0.6));
    CHECK(params.get("b").grad()[0] == doctest::Approx(0.8));
    CHECK(clip_grad_norm(params, 5.0) == doctest::Approx(1.0));
    CHECK(params.get("b").grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("batches cover each epoch exactly once and depend only on seed and iteration") {
    const std::size_t n = 10, batch = 5;
    std::multiset<std::size_t> epoch0;
    for (std::size_t it = 0; it < 2; ++it) {
        for (auto i : batch_indices(3, it, batch, n)) epoch0.insert(i);
    }
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    CHECK(epoch0 == std::multiset<std::size_t>(all.begin(), all.end()));
    CHECK(batch_indices(3, 7, batch, n) == batch_indices(3, 7, batch, n));
    CHECK(batch_indices(3, 7, batch, n) != batch_indices(4, 7, batch, n));
    // batch larger than the dataset spans epochs
    CHECK(batch_indices(0, 0, 25, n).size() == 25);
}

TEST_CASE("first loss is L1 plus lambda times CR of the identity output") {
    auto data = small_data();
    Trainer tr(small_cfg(1), tiny_net(), data);
    const auto idx = batch_indices(11, 0, 4, data.size());
    std::vector<const TensorF*> hz, cl;
    for (auto i : idx) {
        hz.push_back(&data[i].hazy);
        cl.push_back(&data[i].clear);
    }
    const TensorF hazy = stack_images(hz), clear = stack_images(cl);
    const auto ext = CrExtractor<float>::make();
    LossConfig lc;
    lc.lambda_cr = 0.2;
    const double want = l1_loss(hazy, clear).item() + 0.2 * cr_loss(hazy, clear, hazy, ext, lc).item();
    const auto rec = tr.step();
    CHECK(rec.iteration == 0);
    CHECK(std::abs(rec.loss - want) / want <= 1e-6);
    CHECK(std::abs(rec.lr - TrainConfig{}.lr0) <= 1e-18);
}

TEST_CASE("seeded training is bit-reproducible and resumes exactly") {
    const auto data = small_data();
    Trainer a(small_cfg(8), tiny_net(), data);
    a.run();
    Trainer b(small_cfg(8), tiny_net(), data);
    b.run();
    REQUIRE(a.history().size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(a.history()[i].loss == b.history()[i].loss);
    CHECK(same_store(a.params(), b.params()));

    Trainer first(small_cfg(8), tiny_net(), data);
    for (int i = 0; i < 4; ++i) first.step();
    const fs::path ck = fs::temp_directory_path() / "pcsa_test_resume.ckpt";
    save_checkpoint(ck, first.net_config(), first.params(), first.adam());
    Checkpoint loaded = load_checkpoint(ck);
    CHECK(loaded.adam.step == 4);
    Trainer second(small_cfg(8), loaded.net, data, std::move(loaded.params), std::move(loaded.adam));
    second.run();
    for (std::size_t i = 0; i < 4; ++i) CHECK(second.history()[i].loss == a.history()[i + 4].loss);
    CHECK(same_store(second.params(), a.params()));
    fs::remove(ck);
}

TEST_CASE("smoothed toy loss does not increase over the first 50 iterations") {
    DatasetSpec spec;
    auto data = to_image_pairs(generate_dataset(spec));
    data.resize(80);
    TrainConfig cfg;
    cfg.iterations = 300;
    Trainer tr(cfg, NetworkConfig{}, data);
    std::vector<double> loss;
    for (int i = 0; i < 50; ++i) loss.push_back(tr.step().loss);
    std::vector<double> smooth;
    for (std::size_t i = 0; i + 10 <= loss.size(); ++i) {
        smooth.push_back(std::accumulate(loss.begin() + i, loss.begin() + i + 10, 0.0) / 10.0);
    }
    for (std::size_t i = 1; i < smooth.size(); ++i) {
        CAPTURE(i);
        CHECK(smooth[i] <= smooth[i - 1]);
    }
}

TEST_CASE("hand-assembled tensor table decodes") {
    // Written by a separate script with struct.pack following the layout.
    const std::string bytes(
        "\x50\x43\x53\x41\x01\x00\x00\x00\xef\xcd\xab\x89\x67\x45\x23\x01\x01\x00\x00\x00\x01\x00\x77\x02\x02\x00"
        "\x00\x00\x02\x00\x00\x00\x00\x00\x80\x3f\x00\x00\x00\xc0\x00\x00\x00\x3f\x00\x00\x40\x40",
        48);
    const TensorTable t = decode_tensor_table(bytes);
    CHECK(t.digest == 0x0123456789ABCDEFULL);
    REQUIRE(t.tensors.size() == 1);
    CHECK(t.tensors[0].first == "w");
    CHECK(t.tensors[0].second.shape() == Shape{2, 2});
    CHECK(std::vector<float>(t.tensors[0].second.data().begin(), t.tensors[0].second.data().end()) == std::vector<float>{1.0f, -2.0f, 0.5f, 3.0f});
    CHECK(encode_tensor_table(t) == bytes);
}

TEST_CASE("corrupt checkpoints are rejected with a reason") {
    const auto params = init_params<float>(tiny_net(), 0);
    const auto adam = AdamState<float>::zeros_like(params);
    const std::string good = encode_checkpoint(tiny_net(), params, adam);
    CHECK(decode_checkpoint(good).params.size() == params.size());

    auto kind_of = [](const std::string& bytes) {
        try {
            (void)decode_checkpoint(bytes);
        } catch (const CheckpointError& e) {
            return e.kind();
        }
        FAIL("expected CheckpointError");
        return CheckpointErrorKind::io;
    };
    std::string bad = good;
    bad[0] = 'X';
    CHECK(kind_of(bad) == CheckpointErrorKind::bad_magic);
    bad = good;
    bad[4] = 2;
    CHECK(kind_of(bad) == CheckpointErrorKind::version_mismatch);
    bad = good;
    bad[8] ^= 1;
    CHECK(kind_of(bad) == CheckpointErrorKind::digest_mismatch);
    CHECK(kind_of(good.substr(0, good.size() - 3)) == CheckpointErrorKind::truncated);
    CHECK(kind_of(good.substr(0, 30)) == CheckpointErrorKind::truncated);
    CHECK(kind_of(good + "x") == CheckpointErrorKind::malformed);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
}

TEST_CASE("checkpoint keeps the network config and large step counts") {
    NetworkConfig net = tiny_net();
    net.mixer = BlockMixer::depthwise;
    const auto params = init_params<float>(net, 3);
    auto adam = AdamState<float>::zeros_like(params);
    adam.step = 123456789;
    const Checkpoint ck = decode_checkpoint(encode_checkpoint(net, params, adam));
    CHECK(ck.net.digest() == net.digest());
    CHECK(ck.net.mixer == BlockMixer::depthwise);
    CHECK(ck.adam.step == 123456789);
    CHECK(same_store(ck.params, params));
}

TEST_CASE("training reports non-finite values") {
    auto data = small_data(4);
    data[0].hazy.data()[0] = std::nanf("");
    TrainConfig cfg = small_cfg(4);
    cfg.batch = 4;
    Trainer tr(cfg, tiny_net(), data);
    CHECK_THROWS_AS(tr.step(), TrainingError);
}

TEST_CASE("evaluation of an identity network scores the hazy input") {
    auto data = small_data(3);
    auto params = init_params<float>(tiny_net(), 0);
    const auto s = evaluate(data, params, tiny_net());
    REQUIRE(s.rows.size() == 3);
    for (const auto& r : s.rows) CHECK(r.psnr_dehazed == r.psnr_hazy);
    std::vector<ImagePair> clean{ImagePair{data[0].clear, data[0].clear, "c"}};
    const auto c = evaluate(clean, params, tiny_net());
    CHECK(c.mean_psnr_dehazed == 100.0);
    CHECK(c.mean_ssim_dehazed == doctest::Approx(1.0).epsilon(1e-9));
}
