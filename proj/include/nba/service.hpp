#pragma once

#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <thread>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nba/dcr.hpp"
#include "nba/errors.hpp"
#include "nba/pipeline.hpp"
#include "nba/recommender.hpp"

namespace httplib {
class Server;
}

namespace nba {

struct BindError : Error {
    explicit BindError(const std::string& m) : Error("bind_error", m) {}
};

inline constexpr int kApiSchemaVersion = 1;

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

struct CaseSession {
    std::string id;
    RunningCase running;
    Marking marking;                      // replay of the prefix up to the first violation
    ConformanceVerdict verdict = ConformanceVerdict::ok();
    std::vector<std::string> unknown_activities;  // outside the model vocabulary
    std::vector<nlohmann::json> history;  // recommendations served
    std::string created, updated;
    mutable std::mutex mutex;
};

// Transport-independent handlers; the HTTP layer only routes into these.
class CaseService {
public:
    explicit CaseService(std::shared_ptr<const Engine> engine, std::string journal_path = {});

    ApiResponse create_case(const nlohmann::json& body);
    ApiResponse append_event(const std::string& id, const nlohmann::json& body);
    ApiResponse get_state(const std::string& id) const;
    ApiResponse get_recommendation(const std::string& id, std::optional<std::size_t> k);
    ApiResponse what_if(const std::string& id, const nlohmann::json& body) const;
    ApiResponse health() const;
    ApiResponse meta() const;

    // Routes a raw request; used by the HTTP layer and by tests.
    ApiResponse handle(const std::string& method, const std::string& path,
                       const std::map<std::string, std::string>& query, const std::string& body);

    std::size_t case_count() const;
    const Engine& engine() const { return *engine_; }

private:
    std::shared_ptr<CaseSession> find(const std::string& id) const;
    nlohmann::json snapshot(const CaseSession& s) const;
    void journal(const nlohmann::json& entry);
    void recover(const std::string& path);
    void append_locked(CaseSession& s, const std::string& activity, double kpi, std::optional<Timestamp> ts);

    std::shared_ptr<const Engine> engine_;
    mutable std::shared_mutex cases_mutex_;
    std::map<std::string, std::shared_ptr<CaseSession>> cases_;
    std::atomic<std::uint64_t> next_id_{1};
    std::mutex journal_mutex_;
    std::ofstream journal_;
    bool replaying_ = false;
};

// HTTP front end. `start` binds (BindError when the port is taken) and serves
// on a background thread; `stop` stops accepting and drains in-flight requests.
class HttpServer {
public:
    explicit HttpServer(CaseService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    int start(const std::string& host, int port);  // returns the bound port (port 0 picks one)
    void stop();
    void wait();
    bool running() const;

private:
    CaseService& service_;
    std::unique_ptr<httplib::Server> server_;
    std::unique_ptr<std::thread> thread_;
};

} // namespace nba
