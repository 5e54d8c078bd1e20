// nba: train, evaluate, recommend and serve from one declarative config.

#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <optional>

#include <CLI11.hpp>

#include "nba/errors.hpp"
#include "nba/pipeline.hpp"
#include "nba/service.hpp"

namespace {

using namespace nba;
using nlohmann::json;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kArtifact = 3 };

struct Overrides {
    std::string config;
    std::optional<std::size_t> k;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--k", o.k, "Number of candidate suffixes")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o.seed, "Seed for splitting and training");
    cmd->add_option("--workers", o.workers, "Evaluation worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", o.out, "Output directory (artifacts for train, reports for evaluate)");
}

RunConfig load_config(const Overrides& o) {
    auto cfg = RunConfig::load(o.config);
    if (o.k) cfg.k = *o.k;
    if (o.seed) cfg.seed = *o.seed;
    if (o.workers) cfg.workers = *o.workers;
    return cfg;
}

int cmd_train(const Overrides& o) {
    auto cfg = load_config(o);
    if (o.out) cfg.artifacts_dir = fs::absolute(*o.out).string();
    auto outcome = train_pipeline(cfg, &std::cout);
    const auto dir = cfg.resolve(cfg.artifacts_dir);
    write_artifacts(outcome.artifacts, dir);
    std::cout << "artifacts written to " << dir.string() << " (config " << cfg.hash() << ", vocabulary "
              << outcome.artifacts.vocabulary().hash() << ")\n";
    return kOk;
}

int cmd_evaluate(const Overrides& o) {
    auto cfg = load_config(o);
    if (o.out) cfg.report_dir = fs::absolute(*o.out).string();
    cfg.validate(true, true);
    auto engine = Engine::open(cfg);
    auto report = evaluate_pipeline(cfg, *engine);
    std::cout << std::left << std::setw(10) << "method" << std::setw(5) << "k" << std::setw(7) << "p" << std::setw(10)
              << "in-time" << std::setw(10) << "mean DL" << "n\n";
    for (const auto& c : report.cells) {
        std::cout << std::setw(10) << c.method << std::setw(5) << (c.k ? std::to_string(*c.k) : "-") << std::setw(7)
                  << c.prefix_size << std::setw(10)
                  << (c.in_time_rate ? std::to_string(*c.in_time_rate).substr(0, 6) : "-") << std::setw(10)
                  << (c.mean_dl ? std::to_string(*c.mean_dl).substr(0, 6) : "-") << c.n << '\n';
    }
    const auto& d = report.diagnostics;
    std::cout << "recommender instances " << d.recommender_instances << ", optimized steps " << d.optimized_steps
              << ", interventions " << d.interventions << ", fallbacks " << d.fallback_instances << '\n'
              << "report written to " << cfg.resolve(cfg.report_dir).string() << '\n';
    return kOk;
}

// stdin: a JSON array of events, or {"case_id": ..., "events": [...]}; an
// event is an activity name or {"activity", "kpi"?, "timestamp"?}.
RunningCase read_case(std::istream& in, const RunConfig& cfg) {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("standard input is not valid JSON: ") + e.what());
    }
    RunningCase rc;
    rc.trace.case_id = "stdin";
    const json* events = &j;
    if (j.is_object()) {
        if (j.contains("case_id")) rc.trace.case_id = j["case_id"].get<std::string>();
        if (!j.contains("events")) throw SchemaError("input object needs an 'events' array");
        events = &j["events"];
    }
    if (!events->is_array()) throw SchemaError("events must be a JSON array");
    bool all_timed = !events->empty();
    for (const auto& e : *events) {
        Event ev{rc.trace.case_id, "", std::nullopt, 0.0};
        if (e.is_string()) {
            ev.activity = e.get<std::string>();
        } else if (e.is_object() && e.contains("activity")) {
            ev.activity = e["activity"].get<std::string>();
            if (e.contains("kpi") && !e["kpi"].is_null()) ev.kpi_value = e["kpi"].get<double>();
            if (e.contains("timestamp") && !e["timestamp"].is_null())
                ev.timestamp = parse_timestamp(e["timestamp"].get<std::string>());
        } else {
            throw SchemaError("each event must be an activity name or an object with 'activity'");
        }
        if (ev.activity.empty()) throw SchemaError("activity must be non-empty");
        if (ev.kpi_value < 0) throw SchemaError("kpi must be non-negative");
        all_timed = all_timed && ev.timestamp.has_value();
        rc.trace.events.push_back(std::move(ev));
    }
    if (cfg.kpi_mode == KpiMode::inter_event_duration && all_timed && !rc.is_terminated())
        rc.trace = derive_kpi(rc.trace, cfg.kpi_mode);
    return rc;
}

int cmd_recommend(const Overrides& o) {
    auto cfg = load_config(o);
    auto engine = Engine::open(cfg);
    auto rc = read_case(std::cin, cfg);
    auto rec = engine->recommend(rc);
    auto j = rec.to_json();
    j["schema_version"] = kApiSchemaVersion;
    j["case_id"] = rc.trace.case_id;
    j["k"] = cfg.k;
    j["threshold"] = engine->threshold();
    std::cout << j.dump(2) << '\n';
    return kOk;
}

int cmd_serve(const Overrides& o) {
    auto cfg = load_config(o);
    auto engine = Engine::open(cfg);
    // block before any thread exists so only sigwait below sees them
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    CaseService service(engine, cfg.journal_path.empty() ? "" : cfg.resolve(cfg.journal_path).string());
    HttpServer http(service);
    const int port = http.start(cfg.host, cfg.port);
    std::cout << "listening on " << cfg.host << ':' << port << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    std::cout << "signal " << sig << ", draining" << std::endl;
    http.stop();
    http.wait();
    return kOk;
}

int report(const Error& e, int code) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Next-best-action engine for running process instances"};
    app.require_subcommand(1);
    Overrides o;
    auto* train = app.add_subcommand("train", "Train the predictor, build the suffix index, write artifacts");
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate baseline and recommender on the test split");
    auto* recommend = app.add_subcommand("recommend", "Recommend the next action for a case read from stdin");
    auto* serve = app.add_subcommand("serve", "Serve the case API over HTTP");
    for (auto* c : {train, evaluate, recommend, serve}) add_common(c, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (train->parsed()) return cmd_train(o);
        if (evaluate->parsed()) return cmd_evaluate(o);
        if (recommend->parsed()) return cmd_recommend(o);
        if (serve->parsed()) return cmd_serve(o);
    } catch (const ConfigError& e) {
        return report(e, kUsage);
    } catch (const BindError& e) {
        return report(e, kUsage);
    } catch (const ArtifactError& e) {
        return report(e, kArtifact);
    } catch (const Error& e) {
        return report(e, kData);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
