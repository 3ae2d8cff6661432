// End-to-end tests driving the installed `luq` binary (path in LUQ_BIN).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kBin = LUQ_BIN;

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() /
              ("luq_cli_" + std::to_string(static_cast<unsigned>(::getpid())));
        fs::create_directories(dir);
    }
    ~Workspace() { std::error_code ec; fs::remove_all(dir, ec); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& log = "") {
    std::string cmd = kBin + " " + args;
    if (!log.empty()) cmd += " >" + log + " 2>&1";
    int status = std::system(cmd.c_str());
    return (status >> 8) & 0xff;  // POSIX exit code
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json read_json(const std::string& path) { return json::parse(slurp(path)); }

// one small model + calibration set shared by the pipeline tests
struct Pipeline {
    Workspace ws;
    std::string model, calib;
    Pipeline() {
        model = ws.path("model.luqc");
        calib = ws.path("calib.luqc");
        REQUIRE(run("synth --L 4 --d 16 --vocab 16 --seed 3 --out " + model) == 0);
        REQUIRE(run("calib --model " + model +
                    " --n-seqs 8 --seq-len 16 --alpha 0.5 --seed 5 --out " + calib) == 0);
    }
};

}  // namespace

TEST_CASE("missing input file exits 2") {
    Workspace ws;
    CHECK(run("entropy --model /no/such/file --calib /none --out " + ws.path("e.json"),
              ws.path("log")) == 2);
}

TEST_CASE("no subcommand exits 2, --help exits 0") {
    Workspace ws;
    CHECK(run("", ws.path("log")) == 2);
    CHECK(run("--help", ws.path("log2")) == 0);
    CHECK(run("frobnicate", ws.path("log3")) == 2);
}

TEST_CASE("malformed K grid exits 2") {
    Pipeline p;
    CHECK(run("stability --model " + p.model + " --calib " + p.calib +
              " --k-grid nonsense --out " + p.ws.path("s.json"),
              p.ws.path("log")) == 2);
    CHECK(run("stability --model " + p.model + " --calib " + p.calib +
              " --k-grid 5:10:0 --out " + p.ws.path("s.json"),
              p.ws.path("log2")) == 2);
}

TEST_CASE("infeasible budget exits 2 and names the failure") {
    Pipeline p;
    std::string ej = p.ws.path("e.json");
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 1 --out " + ej) == 0);
    std::string log = p.ws.path("budget.log");
    CHECK(run("plan --model " + p.model + " --entropy " + ej +
              " --mode budget --budget-bytes 1 --out " + p.ws.path("p.json"),
              log) == 2);
    CHECK(slurp(log).find("budget infeasible") != std::string::npos);
}

TEST_CASE("entropy output schema and per-seed determinism") {
    Pipeline p;
    std::string e1 = p.ws.path("e1.json"), e2 = p.ws.path("e2.json");
    std::string e3 = p.ws.path("e3.json");
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 1 --out " + e1) == 0);
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 1 --out " + e2) == 0);
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 2 --out " + e3) == 0);

    json j = read_json(e1);
    CHECK(j.at("K") == 8);
    REQUIRE(j.at("H").size() == 4);
    REQUIRE(j.at("pi").size() == 4);
    for (double h : j.at("H")) {
        CHECK(h >= 0.0);
        CHECK(h <= std::log(8.0) + 1e-9);
    }
    std::vector<int64_t> pi = j.at("pi").get<std::vector<int64_t>>(), sorted = pi;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int64_t>{0, 1, 2, 3});

    CHECK(slurp(e1) == slurp(e2));
    CHECK(read_json(e3).at("seed") == 2);
}

TEST_CASE("LUQ_SEED environment variable overrides --seed") {
    Pipeline p;
    std::string ea = p.ws.path("ea.json"), eb = p.ws.path("eb.json");
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 1 --out " + ea) == 0);
    std::string cmd = "LUQ_SEED=1 " + kBin + " entropy --model " + p.model +
                      " --calib " + p.calib + " --k 8 --seed 9 --out " + eb +
                      " >/dev/null 2>&1";
    REQUIRE(((std::system(cmd.c_str()) >> 8) & 0xff) == 0);
    CHECK(read_json(ea).at("H") == read_json(eb).at("H"));
    CHECK(read_json(eb).at("seed") == 1);
}

TEST_CASE("entropy picks up selected_k from a stability file") {
    Pipeline p;
    std::string st = p.ws.path("stab.json"), ej = p.ws.path("es.json");
    REQUIRE(run("stability --model " + p.model + " --calib " + p.calib +
                " --k-grid 2:12:2 --seed 1 --out " + st) == 0);
    json sj = read_json(st);
    REQUIRE(sj.contains("selected_k"));
    REQUIRE(sj.at("grid").size() == 6);
    REQUIRE(sj.at("distances").size() == 5);  // one Kendall distance per grid step
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --stability " + st + " --seed 1 --out " + ej) == 0);
    CHECK(read_json(ej).at("K") == sj.at("selected_k"));
    CHECK(read_json(ej + ".run.json").at("config").at("k") == sj.at("selected_k"));
}

TEST_CASE("plan, quantize and eval chain end to end") {
    Pipeline p;
    std::string ej = p.ws.path("e.json"), pj = p.ws.path("plan.json");
    std::string qm = p.ws.path("q.luqc"), ev = p.ws.path("eval");
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 1 --out " + ej) == 0);
    REQUIRE(run("plan --model " + p.model + " --entropy " + ej +
                " --mode fixed-k --k 2 --group-size 16 --block-size 16 --out " + pj) == 0);
    json plan = read_json(pj);
    CHECK(plan.at("k") == 2);
    CHECK(plan.at("tags").size() == 4);

    REQUIRE(run("quantize --model " + p.model + " --calib " + p.calib + " --plan " +
                pj + " --group-size 16 --block-size 16 --out " + qm) == 0);
    REQUIRE(run("eval --model " + qm + " --calib " + p.calib +
                " --holdout 0.25 --seed 1 --out " + ev) == 0);

    json rep = read_json(ev + ".json");
    CHECK(rep.at("metric") == "accuracy");
    CHECK(rep.at("scalar").get<double>() >= 0.0);
    CHECK(rep.at("scalar").get<double>() <= 1.0);
    CHECK(rep.at("descriptor").at("k") == 2);

    std::string csv = slurp(ev + ".csv");
    CHECK(csv.rfind("k,avg_bits,score,metric,seed\n", 0) == 0);
    CHECK(csv.find("accuracy") != std::string::npos);
}

TEST_CASE("binary and greedy threshold searches agree at the extremes") {
    Pipeline p;
    std::string ej = p.ws.path("e.json");
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 1 --out " + ej) == 0);
    auto plan_fields = [&](const std::string& search, const std::string& tau,
                           const std::string& out) {
        REQUIRE(run("plan --model " + p.model + " --entropy " + ej + " --calib " +
                    p.calib + " --mode threshold --search " + search + " --tau " + tau +
                    " --group-size 16 --block-size 16 --seed 1 --out " + out) == 0);
        json j = read_json(out);
        return json{{"pi", j.at("pi")}, {"k", j.at("k")}, {"tags", j.at("tags")}};
    };
    // tau below any achievable score: both searches keep all layers low
    CHECK(plan_fields("greedy", "-1e18", p.ws.path("g1.json")) ==
          plan_fields("binary", "-1e18", p.ws.path("b1.json")));
    // tau above any achievable score: both refuse to quantize
    json g0 = plan_fields("greedy", "1e18", p.ws.path("g0.json"));
    CHECK(g0 == plan_fields("binary", "1e18", p.ws.path("b0.json")));
    CHECK(g0.at("k") == 0);
}

TEST_CASE("rerun replays a run.json bit-exactly") {
    Pipeline p;
    std::string ej = p.ws.path("e.json");
    REQUIRE(run("entropy --model " + p.model + " --calib " + p.calib +
                " --k 8 --seed 1 --out " + ej) == 0);
    std::string original = slurp(ej);
    fs::remove(ej);
    REQUIRE(run("rerun " + ej + ".run.json") == 0);
    CHECK(slurp(ej) == original);

    // the whole synth step replays too
    std::string m2 = slurp(p.model);
    fs::remove(p.model);
    REQUIRE(run("rerun " + p.model + ".run.json") == 0);
    CHECK(slurp(p.model) == m2);
}
