#include <atomic>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>

#include "refgame/error.hpp"
#include "refgame/harness.hpp"
#include "refgame/refgame.h"
#include "refgame/service.hpp"

#include "httplib.h"

using namespace refgame;
namespace fs = std::filesystem;

struct rg_experiment {
    harness::ExperimentConfig config;
    rg_progress_fn progress = nullptr;
    void* progress_user = nullptr;
    std::mutex server_mutex;
    httplib::Server* server = nullptr;
    std::atomic<bool> stop_requested{false};

    harness::Progress reporter() const {
        if (!progress) return {};
        return [fn = progress, user = progress_user](const std::string& line) { fn(line.c_str(), user); };
    }
};

namespace {

thread_local std::string g_last_error;

rg_status status_of(ErrorCode c) { return static_cast<rg_status>(static_cast<int>(c)); }

template <typename F>
rg_status guarded(F&& f) {
    g_last_error.clear();
    try {
        f();
        return RG_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const nlohmann::json::exception& e) {
        g_last_error = e.what();
        return RG_INVALID_ARGUMENT;
    } catch (const fs::filesystem_error& e) {
        g_last_error = e.what();
        return RG_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return RG_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return RG_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    require(out != nullptr, ErrorCode::internal, "out of memory");
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void persist_config(const harness::ExperimentConfig& c) {
    fs::create_directories(c.out);
    const fs::path path = c.out / "config.json";
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::io, "cannot write " + tmp.string());
        out << harness::config_to_json(c).dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

// Copy of the config restricted to the selected regimes and seed.
harness::ExperimentConfig scoped(const harness::ExperimentConfig& base, const char* const* regimes,
                                 size_t n, const uint64_t* seed) {
    harness::ExperimentConfig c = base;
    if (regimes && n > 0) {
        std::vector<harness::RegimeSpec> picked;
        std::set<std::string> seen;
        for (size_t i = 0; i < n; ++i) {
            require(regimes[i] != nullptr, ErrorCode::invalid_argument, "null regime name");
            if (seen.insert(regimes[i]).second) picked.push_back(harness::find_regime(base, regimes[i]));
        }
        c.regimes = std::move(picked);
    }
    if (seed) c.seeds = {*seed};
    return c;
}

// Failed rows become the call's error, keyed by the code name in the status.
void raise_failed_rows(const harness::ResultTable& t) {
    for (const auto& row : t.rows) {
        if (row.status == "ok") continue;
        ErrorCode code = ErrorCode::internal;
        for (int k = 1; k <= 9; ++k) {
            const std::string name = error_code_name(static_cast<ErrorCode>(k));
            if (row.status.rfind(name + ":", 0) == 0) code = static_cast<ErrorCode>(k);
        }
        fail(code, "regime '" + row.regime + "' failed: " + row.status);
    }
}

}  // namespace

extern "C" {

const char* rg_status_name(rg_status status) {
    if (status == RG_OK) return "ok";
    if (status < RG_INVALID_ARGUMENT || status > RG_INTERNAL) return "unknown";
    return error_code_name(static_cast<ErrorCode>(status));
}

const char* rg_last_error(void) { return g_last_error.c_str(); }

void rg_string_free(char* s) { std::free(s); }

rg_status rg_experiment_open(const char* config_path, const char* out_dir, rg_experiment** out) {
    return guarded([&] {
        require(out != nullptr, ErrorCode::invalid_argument, "null output handle");
        *out = nullptr;
        auto e = std::make_unique<rg_experiment>();
        if (config_path) {
            e->config = harness::load_config(config_path);
        } else if (out_dir && fs::exists(fs::path(out_dir) / "config.json")) {
            e->config = harness::load_config(fs::path(out_dir) / "config.json");
        } else {
            e->config = harness::default_config();
        }
        if (out_dir) e->config.out = out_dir;
        *out = e.release();
    });
}

void rg_experiment_close(rg_experiment* e) { delete e; }

rg_status rg_experiment_set_progress(rg_experiment* e, rg_progress_fn fn, void* user) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        e->progress = fn;
        e->progress_user = user;
    });
}

rg_status rg_experiment_set_workers(rg_experiment* e, int workers) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        require(workers >= 1, ErrorCode::invalid_argument, "workers must be at least 1");
        e->config.workers = workers;
    });
}

rg_status rg_experiment_config(const rg_experiment* e, char** json) {
    return guarded([&] {
        require(e != nullptr && json != nullptr, ErrorCode::invalid_argument, "null argument");
        *json = dup_string(harness::config_to_json(e->config).dump(2));
    });
}

const char* rg_experiment_out_dir(const rg_experiment* e) { return e ? e->config.out.c_str() : ""; }

rg_status rg_gen_data(rg_experiment* e, const uint64_t* seed) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        if (seed) e->config.data.seed = *seed;
        harness::generate_data(e->config);
        persist_config(e->config);
    });
}

rg_status rg_pretrain(rg_experiment* e, const uint64_t* seed) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        if (seed) e->config.pretrain_seed = *seed;
        const auto data = harness::load_data(e->config);
        harness::pretrain_all(e->config, data, e->reporter());
        persist_config(e->config);
    });
}

rg_status rg_train(rg_experiment* e, const char* const* regimes, size_t n, const uint64_t* seed) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        const auto c = scoped(e->config, regimes, n, seed);
        const auto data = harness::load_data(c);
        const auto pre = harness::load_pretrained(c);
        const auto report = e->reporter();
        for (const auto& r : c.regimes)
            for (uint64_t s : c.seeds) {
                harness::train_cell(c, data, pre, r, s);
                if (report) report("trained " + r.name + " seed " + std::to_string(s));
            }
    });
}

rg_status rg_evaluate(rg_experiment* e, const char* const* regimes, size_t n, const uint64_t* seed) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        const auto c = scoped(e->config, regimes, n, seed);
        const auto data = harness::load_data(c);
        const auto pre = harness::load_pretrained(c);
        raise_failed_rows(harness::evaluate_matrix(c, data, pre, e->reporter()));
    });
}

rg_status rg_drift_report(rg_experiment* e, const char* const* regimes, size_t n, const uint64_t* seed,
                          char** csv) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        const auto c = scoped(e->config, regimes, n, seed);
        const auto data = harness::load_data(c);
        const auto pre = harness::load_pretrained(c);
        const auto table = harness::evaluate_matrix(c, data, pre, e->reporter());
        raise_failed_rows(table);
        std::string out = drift::report_csv_header() + "\n";
        for (const auto& r : harness::drift_rows(c, table)) out += drift::report_csv_row(r) + "\n";
        if (csv) *csv = dup_string(out);
    });
}

rg_status rg_ablate(rg_experiment* e, const uint64_t* seed) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        const auto c = scoped(e->config, nullptr, 0, seed);
        const auto data = harness::load_data(c);
        const auto pre = harness::load_pretrained(c);
        harness::run_pragmatic_ablation(c, data, pre, e->reporter());
    });
}

rg_status rg_serve(rg_experiment* e, const uint64_t* seed, const char* host, int port) {
    return guarded([&] {
        require(e != nullptr, ErrorCode::invalid_argument, "null experiment");
        harness::ExperimentConfig c = e->config;
        if (seed) c.service.seed = *seed;
        if (host) c.service.host = host;
        if (port > 0) c.service.port = port;
        const auto data = harness::load_data(c);
        const harness::Layout l{c.out};
        service::SessionManager manager(c.out / "sessions", c.service.groups, service::load_pool(c, data),
                                        c.service.seed);
        httplib::Server server;
        service::install_routes(server, manager, l.human());
        require(server.bind_to_port(c.service.host, c.service.port), ErrorCode::io,
                "cannot listen on " + c.service.host + ":" + std::to_string(c.service.port));
        {
            std::lock_guard<std::mutex> lock(e->server_mutex);
            if (e->stop_requested.exchange(false)) return;
            e->server = &server;
        }
        if (auto report = e->reporter())
            report("serving on http://" + c.service.host + ":" + std::to_string(c.service.port));
        server.listen_after_bind();
        std::lock_guard<std::mutex> lock(e->server_mutex);
        e->server = nullptr;
    });
}

void rg_serve_stop(rg_experiment* e) {
    if (!e) return;
    std::lock_guard<std::mutex> lock(e->server_mutex);
    if (e->server) e->server->stop();
    else e->stop_requested = true;
}

}  // extern "C"
