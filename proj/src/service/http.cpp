#include "refgame/error.hpp"
#include "refgame/service.hpp"

// After Eigen: httplib drags in <resolv.h>, whose _res macro breaks Eigen.
#include "httplib.h"

namespace refgame::service {

namespace {

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument:
        case ErrorCode::shape_mismatch: return 400;
        case ErrorCode::forbidden: return 403;
        case ErrorCode::not_found: return 404;
        case ErrorCode::conflict: return 409;
        default: return 500;
    }
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
    res.status = http_status(code);
    res.set_content(json{{"code", error_code_name(code)}, {"message", message}}.dump(),
                    "application/json; charset=utf-8");
}

// Runs a handler and maps errors to {code, message} bodies.
template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        } catch (const json::exception& e) {
            send_error(res, ErrorCode::invalid_argument, std::string("malformed JSON body: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, ErrorCode::internal, e.what());
        }
    };
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

json body_of(const httplib::Request& req) {
    json j = json::parse(req.body);
    require(j.is_object(), ErrorCode::invalid_argument, "request body must be a JSON object");
    return j;
}

}  // namespace

void install_routes(httplib::Server& server, SessionManager& manager, const fs::path& human_dir) {
    server.Post("/sessions", guarded([&manager](const httplib::Request& req, httplib::Response& res) {
        const json j = body_of(req);
        require(j.contains("group") && j.at("group").is_string(), ErrorCode::invalid_argument,
                "'group' (string) is required");
        require(j.contains("n_rounds") && j.at("n_rounds").is_number_integer(), ErrorCode::invalid_argument,
                "'n_rounds' (integer) is required");
        const std::string id = manager.create_session(j.at("group").get<std::string>(), j.at("n_rounds").get<int>(),
                                                      j.value("annotator", std::string()));
        send_json(res, {{"session_id", id}}, 201);
    }));
    server.Get(R"(/sessions/([^/]+)/round)", guarded([&manager](const httplib::Request& req, httplib::Response& res) {
        send_json(res, manager.next_round(req.matches[1]));
    }));
    server.Post(R"(/sessions/([^/]+)/rounds/(-?\d+)/choice)",
                guarded([&manager, human_dir](const httplib::Request& req, httplib::Response& res) {
                    const json j = body_of(req);
                    require(j.contains("index") && j.at("index").is_number_integer(), ErrorCode::invalid_argument,
                            "'index' (integer) is required");
                    const std::string session = req.matches[1];
                    const json ack = manager.submit_choice(session, std::stoi(req.matches[2]), j.at("index").get<int>());
                    if (ack.at("complete").get<bool>() && !human_dir.empty()) manager.export_human(human_dir);
                    send_json(res, ack);
                }));
    server.Get(R"(/sessions/([^/]+)/stats)", guarded([&manager](const httplib::Request& req, httplib::Response& res) {
        send_json(res, manager.stats(req.matches[1]));
    }));
    server.Get(R"(/export/([^/]+))", guarded([&manager](const httplib::Request& req, httplib::Response& res) {
        res.set_content(manager.export_log(req.matches[1]), "application/x-ndjson; charset=utf-8");
    }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send_error(res, res.status == 404 ? ErrorCode::not_found : ErrorCode::invalid_argument,
                                         "no such endpoint");
    });
}

}  // namespace refgame::service
