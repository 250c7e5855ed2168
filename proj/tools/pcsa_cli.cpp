// pcsa: synth / train / dehaze / eval / gradcheck / bench.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pcsa/attention.hpp"
#include "pcsa/checkpoint.hpp"
#include "pcsa/data.hpp"
#include "pcsa/gradcheck.hpp"
#include "pcsa/metrics.hpp"
#include "pcsa/network.hpp"
#include "pcsa/ppm.hpp"
#include "pcsa/tape.hpp"
#include "pcsa/train.hpp"

namespace fs = std::filesystem;
using namespace pcsa;

namespace {

struct SynthOpts {
    std::size_t count = 100;
    std::int64_t size = 32;
    std::uint64_t seed = 0;
    std::string out_dir;
};

struct TrainOpts {
    std::string data;
    std::size_t iters = 500;
    std::size_t batch = 8;
    double lr = 1.5e-4;
    double lr_min = 1e-6;
    double lambda = 0.2;
    double gamma = 0.25;
    double clip = 1.0;
    std::uint64_t seed = 0;
    std::string ckpt_out;
    std::string resume;
    std::string report;
    std::string eval_data;
    std::int64_t base_channels = 16;
    std::string mixer = "pcsam";
    std::size_t log_every = 10;
};

struct DehazeOpts {
    std::string ckpt, in, out;
};

struct EvalOpts {
    std::string ckpt, data;
};

struct GradOpts {
    std::string scope = "op";
    std::uint64_t seed = 0;
    int precision = 64;
    double tolerance = 1e-3;
    double eps = 1e-4;
};

struct BenchOpts {
    std::string op = "vsa";
    std::string k_list;
    std::string size = "1x32x256x256";
    int reps = 5;
    int warmup = 1;
    std::uint64_t seed = 0;
};

// The manifest may be given directly or as the directory holding it.
fs::path manifest_path(const std::string& data) {
    fs::path p(data);
    if (fs::is_directory(p)) p /= "manifest.txt";
    if (!fs::exists(p)) throw std::runtime_error("manifest not found: " + p.string());
    return p;
}

std::vector<std::int64_t> parse_list(const std::string& text, char sep, const char* what) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || v <= 0) {
            throw std::invalid_argument(std::string("invalid ") + what + " '" + text + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument(std::string("empty ") + what);
    return out;
}

// Appends "--key value" for every key=value line of the --config file whose
// flag is not already on the command line, so explicit flags take precedence
// and unknown keys fail like unknown flags.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string file;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") file = args[i + 1];
    }
    for (const auto& a : args) {
        if (a.rfind("--config=", 0) == 0) file = a.substr(9);
    }
    if (file.empty()) return args;
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open config file " + file);
    auto given = [&](const std::string& flag) {
        for (const auto& a : args) {
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        }
        return false;
    };
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::vector<std::string> extra;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(file + ":" + std::to_string(line_no) + ": expected key=value");
        }
        const std::string flag = "--" + trim(line.substr(0, eq));
        if (given(flag)) continue;
        extra.push_back(flag);
        extra.push_back(trim(line.substr(eq + 1)));
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

void print_config(const CLI::App& sub) {
    std::cout << "# " << sub.get_name() << " config\n";
    std::istringstream lines(sub.config_to_str(true, false));
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty() && line.front() != '[') std::cout << "# " << line << '\n';
    }
}

void print_eval(const EvalSummary& s) {
    std::printf("image psnr_hazy psnr_dehazed ssim_hazy ssim_dehazed\n");
    for (const auto& r : s.rows) {
        std::printf("%s %.4f %.4f %.6f %.6f\n", r.name.c_str(), r.psnr_hazy, r.psnr_dehazed, r.ssim_hazy,
                    r.ssim_dehazed);
    }
    std::printf("mean %.4f %.4f %.6f %.6f\n", s.mean_psnr_hazy, s.mean_psnr_dehazed, s.mean_ssim_hazy,
                s.mean_ssim_dehazed);
}

int run_synth(const SynthOpts& o) {
    DatasetSpec spec;
    spec.count = o.count;
    spec.height = o.size;
    spec.width = o.size;
    spec.seed = o.seed;
    const auto pairs = generate_dataset(spec);
    write_dataset(pairs, o.out_dir);
    double mean_psnr = 0.0;
    for (const auto& p : pairs) mean_psnr += psnr(p.hazy, p.clear);
    if (!pairs.empty()) mean_psnr /= static_cast<double>(pairs.size());
    std::printf("wrote %zu pairs to %s (mean hazy PSNR %.3f dB)\n", pairs.size(), o.out_dir.c_str(), mean_psnr);
    return 0;
}

int run_train(const TrainOpts& o) {
    TrainConfig cfg;
    cfg.lr0 = o.lr;
    cfg.lr_min = o.lr_min;
    cfg.batch = o.batch;
    cfg.iterations = o.iters;
    cfg.lambda = o.lambda;
    cfg.gamma = o.gamma;
    cfg.clip_norm = o.clip;
    cfg.seed = o.seed;

    NetworkConfig net;
    net.base_channels = o.base_channels;
    net.mixer = o.mixer == "depthwise" ? BlockMixer::depthwise : BlockMixer::pcsam;

    auto data = load_dataset(manifest_path(o.data));
    std::optional<Trainer> trainer;
    if (!o.resume.empty()) {
        Checkpoint ck = load_checkpoint(o.resume);
        if (ck.net.digest() != net.digest()) {
            throw std::runtime_error("checkpoint " + o.resume + " was trained with a different network config");
        }
        trainer.emplace(cfg, ck.net, std::move(data), std::move(ck.params), std::move(ck.adam));
    } else {
        trainer.emplace(cfg, net, std::move(data));
    }

    std::ofstream report;
    if (!o.report.empty()) {
        report.open(o.report, std::ios::trunc);
        if (!report) throw std::runtime_error("cannot write report " + o.report);
        report << "iteration lr loss grad_norm\n";
    }
    std::printf("iteration lr loss grad_norm\n");
    trainer->run([&](const IterationRecord& r) {
        char line[128];
        std::snprintf(line, sizeof line, "%zu %.9g %.9g %.9g\n", r.iteration, r.lr, r.loss, r.grad_norm);
        if (report.is_open()) report << line;
        if (o.log_every != 0 && (r.iteration % o.log_every == 0 || r.iteration + 1 == cfg.iterations)) {
            std::fputs(line, stdout);
        }
    });

    if (!o.ckpt_out.empty()) {
        save_checkpoint(o.ckpt_out, trainer->net_config(), trainer->params(), trainer->adam());
        std::printf("saved checkpoint %s at iteration %zu\n", o.ckpt_out.c_str(), trainer->iteration());
    }
    if (!o.eval_data.empty()) {
        const auto eval_pairs = load_dataset(manifest_path(o.eval_data));
        const auto s = evaluate(eval_pairs, trainer->params(), trainer->net_config());
        std::printf("eval mean psnr_hazy %.4f psnr_dehazed %.4f ssim_hazy %.6f ssim_dehazed %.6f\n", s.mean_psnr_hazy,
                    s.mean_psnr_dehazed, s.mean_ssim_hazy, s.mean_ssim_dehazed);
        if (report.is_open()) {
            report << "eval psnr " << s.mean_psnr_dehazed << " ssim " << s.mean_ssim_dehazed << '\n';
        }
    }
    return 0;
}

int run_dehaze(const DehazeOpts& o) {
    Checkpoint ck = load_checkpoint(o.ckpt);
    const TensorF img = read_ppm(o.in);
    if (img.dim(1) % 4 != 0 || img.dim(2) % 4 != 0) {
        throw std::runtime_error("input is " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(1)) +
                                 "; width and height must be multiples of 4 (pad the image)");
    }
    write_ppm(dehaze_image(img, ck.params, ck.net), o.out);
    std::printf("wrote %s\n", o.out.c_str());
    return 0;
}

int run_eval(const EvalOpts& o) {
    Checkpoint ck = load_checkpoint(o.ckpt);
    const auto pairs = load_dataset(manifest_path(o.data));
    print_eval(evaluate(pairs, ck.params, ck.net));
    return 0;
}

int run_gradcheck(const GradOpts& o) {
    if (o.precision != 64) {
        throw std::invalid_argument("gradcheck requires 64-bit precision; 32-bit finite differences are too noisy");
    }
    GradCheckOptions opts;
    opts.seed = o.seed;
    opts.tolerance = o.tolerance;
    opts.eps = o.eps;
    opts.scope = o.scope == "block" ? GradCheckScope::block
                 : o.scope == "net" ? GradCheckScope::net
                                    : GradCheckScope::op;
    const auto results = run_gradcheck_suite(opts);
    std::size_t failed = 0;
    for (const auto& r : results) {
        std::printf("%s %s rel_error=%.3e max_abs=%.3e n=%zu refined=%zu\n", r.passed ? "PASS" : "FAIL",
                    r.group.c_str(), r.rel_error, r.max_abs_error, r.elements, r.refined);
        if (!r.passed) ++failed;
    }
    std::printf("%zu/%zu groups passed\n", results.size() - failed, results.size());
    if (failed != 0) {
        for (const auto& r : results) {
            if (!r.passed) throw std::runtime_error("gradient check failed for " + r.group);
        }
    }
    return 0;
}

int run_bench(const BenchOpts& o) {
    const auto dims = parse_list(o.size, 'x', "size (expected NxCxHxW)");
    if (dims.size() != 4) throw std::invalid_argument("size must be NxCxHxW, got '" + o.size + "'");
    if (o.reps < 3) throw std::invalid_argument("reps must be at least 3");
    if (o.warmup < 0) throw std::invalid_argument("warmup must be nonnegative");
    std::string klist = o.k_list;
    if (klist.empty()) klist = o.op == "pcsa" ? "7,15,31,63" : "8,16,32,64";
    const auto ks = parse_list(klist, ',', "k-list");

    NoGradGuard no_grad;
    Rng rng(o.seed);
    const Shape shape(dims.begin(), dims.end());
    const TensorF x = TensorF::uniform(shape, -1.0, 1.0, rng);

    std::printf("op,K,H,W,C,mean_ns,stddev_ns\n");
    double base = 0.0;
    std::vector<std::pair<std::int64_t, double>> summary;
    for (std::int64_t k : ks) {
        std::function<void()> fn;
        TensorF a;
        PcsaParams<float> pp;
        if (o.op == "vsa" || o.op == "hsa") {
            a = TensorF::uniform({shape[0], k}, 0.0, 1.0, rng);
            fn = o.op == "vsa" ? std::function<void()>([&] { (void)vsa_apply(x, a); })
                               : std::function<void()>([&] { (void)hsa_apply(x, a); });
        } else if (o.op == "pcsa") {
            if (k % 2 == 0) throw std::invalid_argument("pcsa bench needs odd K, got " + std::to_string(k));
            pp = PcsaParams<float>::init(shape[1], 3, static_cast<int>(k), static_cast<int>(k), 4, rng);
            fn = [&] { (void)pcsa_forward(x, pp); };
        } else {
            throw std::invalid_argument("unknown op '" + o.op + "' (expected vsa, hsa or pcsa)");
        }
        for (int i = 0; i < o.warmup; ++i) fn();
        std::vector<double> ns;
        for (int i = 0; i < o.reps; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            const auto t1 = std::chrono::steady_clock::now();
            ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
        }
        double mean = 0.0;
        for (double v : ns) mean += v;
        mean /= static_cast<double>(ns.size());
        double var = 0.0;
        for (double v : ns) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(ns.size() - 1));
        std::printf("%s,%lld,%lld,%lld,%lld,%.0f,%.0f\n", o.op.c_str(), static_cast<long long>(k),
                    static_cast<long long>(shape[2]), static_cast<long long>(shape[3]),
                    static_cast<long long>(shape[1]), mean, sd);
        if (summary.empty()) base = mean;
        summary.emplace_back(k, mean);
    }
    std::printf("# K mean_ns ratio\n");
    for (const auto& [k, mean] : summary) {
        std::printf("# %lld %.0f %.3f\n", static_cast<long long>(k), mean, mean / base);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parallel cross strip attention dehazing toolkit"};
    app.require_subcommand(1, 1);
    app.allow_config_extras(false);

    SynthOpts so;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic hazy/clear dataset");
    synth->add_option("--count", so.count, "Number of pairs")->capture_default_str();
    synth->add_option("--size", so.size, "Image height and width")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--seed", so.seed, "Random seed")->capture_default_str();
    synth->add_option("--out-dir", so.out_dir, "Output directory")->required();

    TrainOpts to;
    auto* train = app.add_subcommand("train", "Train the network");
    train->add_option("--data", to.data, "Manifest file or dataset directory")->required();
    train->add_option("--iters", to.iters, "Iterations")->capture_default_str();
    train->add_option("--batch", to.batch, "Batch size")->capture_default_str();
    train->add_option("--lr", to.lr, "Initial learning rate")->capture_default_str();
    train->add_option("--lr-min", to.lr_min, "Final learning rate")->capture_default_str();
    train->add_option("--lambda", to.lambda, "Contrastive regularization weight")->capture_default_str();
    train->add_option("--gamma", to.gamma, "Stored only")->capture_default_str();
    train->add_option("--clip", to.clip, "Global gradient norm limit")->capture_default_str();
    train->add_option("--seed", to.seed, "Random seed")->capture_default_str();
    train->add_option("--ckpt-out", to.ckpt_out, "Checkpoint to write at the end");
    train->add_option("--resume", to.resume, "Checkpoint to continue from");
    train->add_option("--report", to.report, "Per-iteration report file");
    train->add_option("--eval-data", to.eval_data, "Held-out manifest evaluated after training");
    train->add_option("--base-channels", to.base_channels, "Channels at full resolution")->capture_default_str();
    train->add_option("--mixer", to.mixer, "Block mixer")
        ->capture_default_str()
        ->check(CLI::IsMember({"pcsam", "depthwise"}));
    train->add_option("--log-every", to.log_every, "Print every n-th iteration (0: never)")->capture_default_str();

    DehazeOpts dho;
    auto* dehaze = app.add_subcommand("dehaze", "Dehaze one PPM image");
    dehaze->add_option("--ckpt", dho.ckpt, "Checkpoint")->required();
    dehaze->add_option("--in", dho.in, "Input PPM")->required();
    dehaze->add_option("--out", dho.out, "Output PPM")->required();

    EvalOpts eo;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM over a dataset");
    eval->add_option("--ckpt", eo.ckpt, "Checkpoint")->required();
    eval->add_option("--data", eo.data, "Manifest file or dataset directory")->required();

    GradOpts go;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    grad->add_option("--scope", go.scope, "op, block or net")
        ->capture_default_str()
        ->check(CLI::IsMember({"op", "block", "net"}));
    grad->add_option("--seed", go.seed, "Random seed")->capture_default_str();
    grad->add_option("--precision", go.precision, "Floating point bits (only 64)")->capture_default_str();
    grad->add_option("--tolerance", go.tolerance, "Relative error limit")->capture_default_str();
    grad->add_option("--eps", go.eps, "Central difference step")->capture_default_str()->check(CLI::PositiveNumber);

    BenchOpts bo;
    auto* bench = app.add_subcommand("bench", "Time strip attention for several strip lengths");
    bench->add_option("--op", bo.op, "vsa, hsa or pcsa")
        ->capture_default_str()
        ->check(CLI::IsMember({"vsa", "hsa", "pcsa"}));
    bench->add_option("--k-list", bo.k_list, "Comma-separated strip lengths");
    bench->add_option("--size", bo.size, "NxCxHxW")->capture_default_str();
    bench->add_option("--reps", bo.reps, "Timed repetitions (>= 3)")->capture_default_str();
    bench->add_option("--warmup", bo.warmup, "Discarded repetitions")->capture_default_str();
    bench->add_option("--seed", bo.seed, "Random seed")->capture_default_str();

    for (auto* sub : {synth, train, dehaze, eval, grad, bench}) {
        sub->add_option("--config", "key=value file ('#' comments); explicit flags take precedence");
    }

    std::vector<std::string> args;
    try {
        args = expand_config(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    // CLI11 consumes the vector form from the back.
    std::reverse(args.begin(), args.end());

    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        for (char& c : msg) {
            if (c == '\n') c = ' ';
        }
        std::cerr << "error: " << msg << '\n';
        return 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        print_config(*sub);
        std::fflush(stdout);
        if (sub == synth) return run_synth(so);
        if (sub == train) return run_train(to);
        if (sub == dehaze) return run_dehaze(dho);
        if (sub == eval) return run_eval(eo);
        if (sub == grad) return run_gradcheck(go);
        return run_bench(bo);
    } catch (const std::exception& e) {
        std::fflush(stdout);
        std::string msg = e.what();
        for (char& c : msg) {
            if (c == '\n') c = ' ';
        }
        std::cerr << "error: " << msg << '\n';
        return 1;
    }
}
