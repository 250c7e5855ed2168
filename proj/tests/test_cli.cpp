#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "pcsa/ppm.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;  // stdout and stderr
};

Run cli(const std::string& args) {
    const std::string cmd = std::string(PCSA_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pcsa_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::size_t lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("synth is deterministic and accepts count 0") {
    const fs::path a = scratch("synth_a"), b = scratch("synth_b"), e = scratch("synth_empty");
    REQUIRE(cli("synth --count 3 --size 8 --seed 4 --out-dir " + a.string()).code == 0);
    REQUIRE(cli("synth --count 3 --size 8 --seed 4 --out-dir " + b.string()).code == 0);
    for (const char* f : {"manifest.txt", "hazy_0002.ppm", "clear_0000.ppm"}) {
        CAPTURE(f);
        CHECK(slurp(a / f) == slurp(b / f));
    }
    const Run r = cli("synth --count 0 --out-dir " + e.string());
    CHECK(r.code == 0);
    CHECK(slurp(e / "manifest.txt").empty());
}

TEST_CASE("every run prints the resolved config; failures are one line") {
    const Run ok = cli("synth --count 0 --out-dir " + scratch("cfg").string());
    CHECK(ok.out.find("# synth config") != std::string::npos);
    CHECK(ok.out.find("seed=0") != std::string::npos);

    const Run missing = cli("train --data /nonexistent/manifest.txt");
    CHECK(missing.code != 0);
    CHECK(missing.out.find("error: manifest not found") != std::string::npos);

    const Run unknown = cli("synth --out-dir /tmp/x --bogus 1");
    CHECK(unknown.code != 0);
    CHECK(lines(unknown.out) == 1);
}

TEST_CASE("config files fill in flags that are not given") {
    const fs::path d = scratch("conf");
    std::ofstream(d / "synth.conf") << "# toy\ncount=2\nsize=8\nseed=9\n";
    const Run r = cli("synth --config " + (d / "synth.conf").string() + " --seed 5 --out-dir " + (d / "out").string());
    REQUIRE(r.code == 0);
    CHECK(r.out.find("count=2") != std::string::npos);
    CHECK(r.out.find("seed=5") != std::string::npos);
    CHECK(r.out.find("wrote 2 pairs") != std::string::npos);

    std::ofstream(d / "bad.conf") << "colour=blue\n";
    CHECK(cli("synth --config " + (d / "bad.conf").string() + " --out-dir " + (d / "out2").string()).code != 0);
}

TEST_CASE("train, dehaze and eval work together") {
    const fs::path d = scratch("pipeline");
    REQUIRE(cli("synth --count 6 --size 16 --seed 1 --out-dir " + (d / "data").string()).code == 0);
    const std::string common = "train --data " + (d / "data").string() + " --iters 3 --batch 2 --base-channels 4 --seed 2";
    REQUIRE(cli(common + " --report " + (d / "r1.txt").string() + " --ckpt-out " + (d / "m.ckpt").string()).code == 0);
    REQUIRE(cli(common + " --report " + (d / "r2.txt").string()).code == 0);
    CHECK(lines(slurp(d / "r1.txt")) == 4);
    CHECK(slurp(d / "r1.txt") == slurp(d / "r2.txt"));

    const Run ev = cli("eval --ckpt " + (d / "m.ckpt").string() + " --data " + (d / "data").string());
    REQUIRE(ev.code == 0);
    CHECK(ev.out.find("hazy_0005.ppm") != std::string::npos);
    CHECK(ev.out.find("\nmean ") != std::string::npos);
    CHECK(cli("eval --ckpt " + (d / "m.ckpt").string() + " --data " + (d / "data").string()).out == ev.out);

    // clear vs clear through an identity checkpoint
    std::ofstream(d / "data" / "clear.txt") << "clear_0000.ppm clear_0000.ppm\n";
    REQUIRE(cli("train --data " + (d / "data").string() + " --iters 0 --base-channels 4 --ckpt-out " +
                (d / "id.ckpt").string())
                .code == 0);
    const Run cc = cli("eval --ckpt " + (d / "id.ckpt").string() + " --data " + (d / "data" / "clear.txt").string());
    CHECK(cc.out.find("mean 100.0000 100.0000 1.000000 1.000000") != std::string::npos);

    const fs::path in = d / "data" / "hazy_0001.ppm", out = d / "out.ppm";
    REQUIRE(cli("dehaze --ckpt " + (d / "id.ckpt").string() + " --in " + in.string() + " --out " + out.string()).code == 0);
    CHECK(slurp(in) == slurp(out));

    pcsa::write_ppm(pcsa::TensorF({3, 10, 12}, 0.5f), d / "odd.ppm");
    const Run odd = cli("dehaze --ckpt " + (d / "id.ckpt").string() + " --in " + (d / "odd.ppm").string() + " --out " +
                        (d / "o.ppm").string());
    CHECK(odd.code != 0);
    CHECK(odd.out.find("pad") != std::string::npos);

    std::ofstream(d / "junk.ckpt") << "not a checkpoint";
    const Run junk = cli("eval --ckpt " + (d / "junk.ckpt").string() + " --data " + (d / "data").string());
    CHECK(junk.code != 0);
    CHECK(junk.out.find("bad magic") != std::string::npos);
}

TEST_CASE("resume checks the network config") {
    const fs::path d = scratch("resume");
    REQUIRE(cli("synth --count 6 --size 16 --seed 1 --out-dir " + (d / "data").string()).code == 0);
    const std::string common = "train --data " + (d / "data").string() + " --batch 2 --seed 2 --log-every 0 --iters 2";
    REQUIRE(cli(common + " --base-channels 4 --ckpt-out " + (d / "a.ckpt").string()).code == 0);
    // Already at the last iteration: resuming trains nothing and saves the same state.
    REQUIRE(cli(common + " --base-channels 4 --resume " + (d / "a.ckpt").string() + " --ckpt-out " +
                (d / "b.ckpt").string())
                .code == 0);
    CHECK(slurp(d / "a.ckpt") == slurp(d / "b.ckpt"));
    const Run bad = cli(common + " --base-channels 8 --resume " + (d / "a.ckpt").string());
    CHECK(bad.code != 0);
    CHECK(bad.out.find("different network config") != std::string::npos);
}

TEST_CASE("gradcheck refuses 32-bit and reports groups") {
    const Run r32 = cli("gradcheck --precision 32");
    CHECK(r32.code != 0);
    CHECK(r32.out.find("64-bit") != std::string::npos);
    const Run op = cli("gradcheck --scope op --seed 3");
    CHECK(op.code == 0);
    CHECK(op.out.find("PASS op.vsa_apply_k3.a") != std::string::npos);
    CHECK(op.out.find("FAIL") == std::string::npos);
}

TEST_CASE("bench prints CSV rows") {
    const Run r = cli("bench --op hsa --k-list 1,3 --size 1x2x8x8 --reps 3");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("op,K,H,W,C,mean_ns,stddev_ns") != std::string::npos);
    CHECK(r.out.find("\nhsa,3,8,8,2,") != std::string::npos);
    CHECK(cli("bench --reps 2 --size 1x2x8x8").code != 0);
    CHECK(cli("bench --op pcsa --k-list 4 --size 1x2x8x8 --reps 3").code != 0);
}
