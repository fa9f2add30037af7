// refgame: command-line front end over the C API.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "refgame/refgame.h"

namespace {

constexpr int kUsageExit = 64;

using nlohmann::json;

struct Common {
    std::string config;
    std::string out;
    std::optional<uint64_t> seed;
    int workers = 0;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "seed override");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--workers", c.workers, "parallel matrix cells")->check(CLI::PositiveNumber);
    cmd->add_flag("-q,--quiet", c.quiet, "no progress lines on stderr");
}

int report_error(const std::string& code, const std::string& message, int exit_code) {
    std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
    return exit_code;
}

int report_status(rg_status s) { return report_error(rg_status_name(s), rg_last_error(), static_cast<int>(s)); }

void print_progress(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted = true; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Referential-game laboratory: data, pretraining, speaker regimes, drift and human evaluation"};
    app.require_subcommand(1);
    Common common;
    std::vector<std::string> regimes;
    std::string host;
    int port = 0;

    auto* gen = app.add_subcommand("gen-data", "generate the scene corpus and evaluation splits");
    auto* pretrain = app.add_subcommand("pretrain", "pretrain the captioner, language model and fixed listener");
    auto* train = app.add_subcommand("train", "train speaker regimes (all configured regimes by default)");
    auto* evaluate = app.add_subcommand("evaluate", "evaluate trained cells and write the result tables");
    auto* drift = app.add_subcommand("drift-report", "structural/semantic/pragmatic drift per regime (CSV)");
    auto* ablate = app.add_subcommand("ablate", "pragmatic-drift ablation over unfreeze sets");
    auto* serve = app.add_subcommand("serve", "HTTP session service for human listeners");
    for (auto* cmd : {gen, pretrain, train, evaluate, drift, ablate, serve}) add_common(cmd, common);
    for (auto* cmd : {train, evaluate, drift}) cmd->add_option("--regime", regimes, "regime name (repeatable)");
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port")->check(CLI::Range(1, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage", e.what(), kUsageExit);
    }

    rg_experiment* exp = nullptr;
    rg_status s = rg_experiment_open(common.config.empty() ? nullptr : common.config.c_str(),
                                     common.out.empty() ? nullptr : common.out.c_str(), &exp);
    if (s != RG_OK) return report_status(s);
    if (!common.quiet) rg_experiment_set_progress(exp, print_progress, nullptr);
    if (common.workers > 0) rg_experiment_set_workers(exp, common.workers);
    const uint64_t* seed = common.seed ? &*common.seed : nullptr;
    std::vector<const char*> names;
    for (const auto& r : regimes) names.push_back(r.c_str());
    const char* const* sel = names.empty() ? nullptr : names.data();

    const std::string command = app.get_subcommands().front()->get_name();
    std::string csv;
    if (command == "gen-data") {
        s = rg_gen_data(exp, seed);
    } else if (command == "pretrain") {
        s = rg_pretrain(exp, seed);
    } else if (command == "train") {
        s = rg_train(exp, sel, names.size(), seed);
    } else if (command == "evaluate") {
        s = rg_evaluate(exp, sel, names.size(), seed);
    } else if (command == "drift-report") {
        char* text = nullptr;
        s = rg_drift_report(exp, sel, names.size(), seed, &text);
        if (text) {
            csv = text;
            rg_string_free(text);
        }
    } else if (command == "ablate") {
        s = rg_ablate(exp, seed);
    } else if (command == "serve") {
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::atomic<bool> done{false};
        std::thread watcher([&] {
            while (!done) {
                if (g_interrupted) {
                    rg_serve_stop(exp);
                    break;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
        });
        s = rg_serve(exp, seed, host.empty() ? nullptr : host.c_str(), port);
        done = true;
        watcher.join();
    }
    const std::string out_dir = rg_experiment_out_dir(exp);
    if (s != RG_OK) {
        const int code = report_status(s);
        rg_experiment_close(exp);
        return code;
    }
    rg_experiment_close(exp);
    if (!csv.empty()) std::cout << csv;
    else std::cout << json{{"command", command}, {"status", "ok"}, {"out", out_dir}}.dump() << std::endl;
    return 0;
}
