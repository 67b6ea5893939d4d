#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "motionood/grid_io.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(MOTIONOOD_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

nlohmann::json read_json(const fs::path& p) {
    std::ifstream is(p);
    return nlohmann::json::parse(is);
}

}  // namespace

TEST_CASE("cli pipeline at small scale") {
    motionood::testing::TempDir dir("cli");
    const fs::path corpus = dir / "corpus";
    REQUIRE(run("synth --out " + q(corpus) + " --n-id 6 --n-ood 3 --seed 4 --size 16 --length 12") == 0);
    CHECK(fs::exists(corpus / "index.json"));

    const fs::path weights = dir / "w.bin";
    REQUIRE(run("train --corpus " + q(corpus) + " --out " + q(weights) +
                " --epochs 1 --seed 2 --input-size 16 --latent 4 --pair-stride 3 --cal-fraction 0.34") == 0);
    CHECK(fs::exists(weights));
    CHECK(fs::exists(dir / "w.bin.split.json"));
    CHECK(fs::exists(dir / "w.bin.log.csv"));

    const fs::path cal = dir / "cal.bin";
    REQUIRE(run("calibrate --corpus " + q(corpus) + " --weights " + q(weights) + " --out " + q(cal)) == 0);

    const fs::path ep = corpus / "ood_0000" / "manifest.json";
    CHECK(run("detect --episode " + q(ep) + " --weights " + q(weights) + " --cal " + q(cal) + " --out-curve " +
              q(dir / "curve.csv") + " --out-events " + q(dir / "events.jsonl")) == 0);
    std::ifstream curve(dir / "curve.csv");
    std::string header;
    std::getline(curve, header);
    CHECK(header == "frame,alpha,p,log_m,exceed_count");
    std::size_t rows = 0;
    for (std::string line; std::getline(curve, line);) ++rows;
    CHECK(rows == 11);

    CHECK(run("localize --episode " + q(ep) + " --frame 5 --weights " + q(weights) + " --cal " + q(cal) +
              " --out-overlay " + q(dir / "ov.fgrid") + " --out-composite " + q(dir / "comp.ppm")) == 0);
    const motionood::Grid ov = motionood::read_fgrid(dir / "ov.fgrid");
    CHECK(ov.channels() == 1);
    CHECK(ov.height() == 16);
    CHECK(fs::exists(dir / "comp.ppm"));

    CHECK(run("eval --corpus " + q(corpus) + " --weights " + q(weights) + " --cal " + q(cal) + " --out " +
              q(dir / "metrics.json") + " --grid 0,1,3") == 0);
    const auto m = read_json(dir / "metrics.json");
    CHECK(m["tp"].get<int>() + m["fp"].get<int>() + m["tn"].get<int>() + m["fn"].get<int>() == 9);
    CHECK(m["grid"].size() == 3);

    CHECK(run("bench --episode " + q(ep) + " --weights " + q(weights) + " --cal " + q(cal) + " --reps 10 --out " +
              q(dir / "lat.json")) == 0);
    const auto lat = read_json(dir / "lat.json");
    for (const char* k : {"mean_ms", "p95_ms", "flow_ms", "encode_ms", "conformal_ms"}) CHECK(lat[k].get<double>() > 0.0);
    CHECK(lat["reps"] == 10);

    SUBCASE("exit codes") {
        CHECK(run("") == 2);
        CHECK(run("synth --out x") == 2);
        CHECK(run("detect --episode " + q(dir / "nope.json") + " --weights " + q(weights) + " --cal " + q(cal) +
                  " --out-curve a --out-events b") == 3);
        CHECK(run("localize --episode " + q(ep) + " --frame 0 --weights " + q(weights) + " --cal " + q(cal) +
                  " --out-overlay a --out-composite b") == 2);
        CHECK(run("localize --episode " + q(ep) + " --frame 12 --weights " + q(weights) + " --cal " + q(cal) +
                  " --out-overlay a --out-composite b") == 2);
        std::ofstream(dir / "junk.bin") << "junkjunkjunkjunkjunkjunk";
        CHECK(run("detect --episode " + q(ep) + " --weights " + q(dir / "junk.bin") + " --cal " + q(cal) +
                  " --out-curve a --out-events b") == 2);
        CHECK(run("bench --episode " + q(ep) + " --weights " + q(weights) + " --cal " + q(cal) +
                  " --reps 3 --out " + q(dir / "x.json")) == 2);
        CHECK(run("synth --out " + q(dir / "c2") + " --n-id 1 --n-ood 0 --seed 1") == 2);
    }
}
