#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "refgame/refgame.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kTiny = R"({
  "world": {"scenes": 200, "pairs_per_split": 30},
  "sizes": {"adapter_dim": 12, "word_dim": 8, "hidden": 10, "listener_dim": 9,
            "rerank_word_dim": 7, "message_embed": 11},
  "pretrain": {"captioner_epochs": 1, "lm_epochs": 1, "listener_steps": 20, "batch_size": 16},
  "training": {"episodes": 4, "batch_size": 4, "rerank": {"candidates": 4}},
  "seeds": [1]
})";

fs::path workdir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "refgame_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        std::ofstream(d / "tiny.json") << kTiny;
        return d;
    }();
    return dir;
}

struct Outcome {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome run(const std::string& args) {
    const fs::path d = workdir();
    const std::string cmd = std::string(REFGAME_CLI) + " " + args + " >" + (d / "stdout").string() + " 2>" +
                            (d / "stderr").string();
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(d / "stdout"), slurp(d / "stderr")};
}

// Last stderr line parsed as the structured error.
json error_of(const Outcome& o) {
    std::istringstream in(o.err);
    std::string line, last;
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    return json::parse(last).at("error");
}

}  // namespace

TEST_CASE("gen-data with a fixed seed is reproducible") {
    const fs::path d = workdir();
    const std::string cfg = "--config " + (d / "tiny.json").string();
    REQUIRE(run("gen-data " + cfg + " --seed 7 --out " + (d / "a").string()).exit_code == 0);
    REQUIRE(run("gen-data " + cfg + " --seed 7 --out " + (d / "b").string()).exit_code == 0);
    REQUIRE(run("gen-data " + cfg + " --seed 8 --out " + (d / "c").string()).exit_code == 0);
    CHECK(slurp(d / "a/data/corpus.jsonl") == slurp(d / "b/data/corpus.jsonl"));
    CHECK(slurp(d / "a/data/splits.json") == slurp(d / "b/data/splits.json"));
    CHECK(slurp(d / "a/data/corpus.jsonl") != slurp(d / "c/data/corpus.jsonl"));
    CHECK(json::parse(slurp(d / "a/config.json")).at("world").at("seed") == 7);
}

TEST_CASE("missing prerequisites and bad usage exit nonzero with a structured error") {
    const fs::path d = workdir();
    const std::string out = (d / "deps").string();
    REQUIRE(run("gen-data --config " + (d / "tiny.json").string() + " --out " + out).exit_code == 0);

    const Outcome poe = run("train --regime poe --out " + out);
    CHECK(poe.exit_code == RG_DEPENDENCY);
    CHECK(error_of(poe).at("code") == "dependency");
    CHECK(error_of(poe).at("message").get<std::string>().find("pretrain") != std::string::npos);

    const Outcome unknown = run("train --frobnicate --out " + out);
    CHECK(unknown.exit_code == 64);
    CHECK(error_of(unknown).at("code") == "usage");
    const Outcome missing = run("evaluate --config " + (d / "nope.json").string());
    CHECK(missing.exit_code == 64);
    CHECK(run("").exit_code == 64);
    CHECK(run("--help").exit_code == 0);
    const Outcome regime = run("evaluate --regime ghost --out " + out);
    CHECK(regime.exit_code == RG_NOT_FOUND);
    CHECK(error_of(regime).at("code") == "not_found");
    const Outcome no_data = run("pretrain --out " + (d / "empty").string());
    CHECK(no_data.exit_code == RG_DEPENDENCY);
}

TEST_CASE("pipeline smoke: gen-data, pretrain, train, evaluate, drift-report") {
    const fs::path d = workdir();
    const std::string out = " --out " + (d / "smoke").string() + " -q";
    REQUIRE(run("gen-data --config " + (d / "tiny.json").string() + out).exit_code == 0);
    REQUIRE(run("pretrain" + out).exit_code == 0);
    REQUIRE(run("train --regime emergent --regime captioner_greedy --seed 1" + out).exit_code == 0);
    const Outcome ev = run("evaluate --regime emergent --regime captioner_greedy --seed 1" + out);
    REQUIRE(ev.exit_code == 0);
    CHECK(json::parse(ev.out).at("status") == "ok");
    const std::string table = slurp(d / "smoke/tables/results.csv");
    CHECK(table.find("emergent,ok") != std::string::npos);
    CHECK(table.find("captioner_greedy,ok") != std::string::npos);
    const Outcome dr = run("drift-report --regime emergent --seed 1" + out);
    REQUIRE(dr.exit_code == 0);
    CHECK(dr.out.rfind("speaker,log_p_m", 0) == 0);
    CHECK(dr.out.find("\nemergent,") != std::string::npos);
}

TEST_CASE("C API: handles, status codes and error messages") {
    rg_experiment* e = nullptr;
    CHECK(rg_experiment_open("/definitely/not/here.json", nullptr, &e) == RG_NOT_FOUND);
    CHECK(e == nullptr);
    CHECK(std::string(rg_last_error()).find("not/here") != std::string::npos);
    CHECK(std::string(rg_status_name(RG_DEPENDENCY)) == "dependency");
    CHECK(std::string(rg_status_name(RG_OK)) == "ok");
    CHECK(rg_experiment_open(nullptr, nullptr, nullptr) == RG_INVALID_ARGUMENT);

    const fs::path d = workdir();
    REQUIRE(rg_experiment_open((d / "tiny.json").c_str(), (d / "capi").c_str(), &e) == RG_OK);
    CHECK(std::string(rg_experiment_out_dir(e)) == (d / "capi").string());
    char* cfg = nullptr;
    REQUIRE(rg_experiment_config(e, &cfg) == RG_OK);
    CHECK(json::parse(cfg).at("world").at("scenes") == 200);
    rg_string_free(cfg);
    CHECK(rg_experiment_set_workers(e, 0) == RG_INVALID_ARGUMENT);
    CHECK(rg_pretrain(e, nullptr) == RG_DEPENDENCY);
    CHECK(rg_gen_data(e, nullptr) == RG_OK);
    CHECK(std::string(rg_last_error()).empty());
    const char* bad[] = {"ghost"};
    CHECK(rg_train(e, bad, 1, nullptr) == RG_NOT_FOUND);
    rg_serve_stop(e);  // harmless when not serving
    rg_experiment_close(e);
    rg_experiment_close(nullptr);
}
