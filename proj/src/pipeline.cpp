#include "nba/pipeline.hpp"

#include <fstream>
#include <ostream>
#include <set>

#include "nba/errors.hpp"
#include "nba/hash.hpp"

namespace nba {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys = {"log",       "split", "predictor", "index", "graph",         "recommender",
                                        "evaluation", "seed",  "workers",   "artifacts_dir", "report_dir", "service"};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [k, _] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

json section(const json& j, const char* key) {
    if (!j.contains(key)) return json::object();
    if (!j.at(key).is_object()) throw ConfigError(std::string("'") + key + "' must be an object");
    return j.at(key);
}

std::string threshold_origin(ThresholdOrigin o) { return o == ThresholdOrigin::expert ? "expert" : "derived"; }

json read_json_file(const fs::path& p, const char* what) {
    std::ifstream in(p);
    if (!in) throw ArtifactError(std::string("missing ") + what + " artifact: " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ArtifactError(std::string("corrupt ") + what + " artifact " + p.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(1) << '\n';
    if (!out) throw IoError("write failed for " + p.string());
}

} // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    c.base_dir = base_dir;
    try {
        reject_unknown(j, kTopKeys, "config");

        auto log = section(j, "log");
        reject_unknown(log,
                       {"path", "case_column", "activity_column", "timestamp_column", "kpi_column", "delimiter",
                        "kpi_mode", "subsample_fraction", "max_trace_events"},
                       "log");
        read(log, "path", c.log_path);
        read(log, "case_column", c.schema.case_column);
        read(log, "activity_column", c.schema.activity_column);
        read(log, "timestamp_column", c.schema.timestamp_column);
        if (log.contains("kpi_column") && !log["kpi_column"].is_null())
            c.schema.kpi_column = log["kpi_column"].get<std::string>();
        if (log.contains("delimiter")) {
            auto d = log["delimiter"].get<std::string>();
            if (d.size() != 1) throw ConfigError("log.delimiter must be a single character");
            c.schema.delimiter = d[0];
        }
        if (log.contains("kpi_mode")) {
            try {
                c.kpi_mode = kpi_mode_from_string(log["kpi_mode"].get<std::string>());
            } catch (const Error& e) {
                throw ConfigError(std::string("log.kpi_mode: ") + e.what());
            }
        }
        read(log, "subsample_fraction", c.subsample_fraction);
        read(log, "max_trace_events", c.max_trace_events);

        auto split = section(j, "split");
        reject_unknown(split, {"train_fraction"}, "split");
        read(split, "train_fraction", c.train_fraction);

        if (j.contains("predictor")) {
            try {
                c.predictor = TrainConfig::from_json(j.at("predictor"));
            } catch (const ConfigError&) {
                throw;
            } catch (const Error& e) {
                throw ConfigError(std::string("predictor: ") + e.what());
            }
        }

        auto index = section(j, "index");
        reject_unknown(index, {"kpi_weight", "leaf_size", "distinct_candidates"}, "index");
        read(index, "kpi_weight", c.kpi_weight);
        read(index, "leaf_size", c.leaf_size);
        read(index, "distinct_candidates", c.distinct_candidates);

        auto graph = section(j, "graph");
        reject_unknown(graph, {"path", "strict", "include_wins"}, "graph");
        read(graph, "path", c.graph_path);
        read(graph, "strict", c.graph_options.strict);
        read(graph, "include_wins", c.graph_options.include_wins);

        auto rec = section(j, "recommender");
        reject_unknown(rec, {"k", "threshold", "check_threshold_once"}, "recommender");
        read(rec, "k", c.k);
        read(rec, "check_threshold_once", c.check_threshold_once);
        if (rec.contains("threshold")) {
            const auto& t = rec["threshold"];
            if (t.is_number()) {
                c.threshold = t.get<double>();
            } else if (t.is_string() && t.get<std::string>() == "derived") {
                c.threshold.reset();
            } else if (t.is_object()) {
                reject_unknown(t, {"mode", "value"}, "recommender.threshold");
                const auto mode = t.value("mode", std::string("derived"));
                if (mode == "expert") {
                    if (!t.contains("value")) throw ConfigError("recommender.threshold: expert mode needs a value");
                    c.threshold = t["value"].get<double>();
                } else if (mode != "derived") {
                    throw ConfigError("recommender.threshold.mode must be 'expert' or 'derived', got '" + mode + "'");
                }
            } else {
                throw ConfigError("recommender.threshold must be a number, \"derived\" or {mode, value}");
            }
        }

        auto ev = section(j, "evaluation");
        reject_unknown(ev, {"k_values", "min_prefix", "max_prefix", "boundary_in_time", "max_steps"}, "evaluation");
        read(ev, "k_values", c.k_values);
        read(ev, "min_prefix", c.min_prefix);
        read(ev, "max_prefix", c.max_prefix);
        read(ev, "boundary_in_time", c.boundary_in_time);
        read(ev, "max_steps", c.max_steps);

        read(j, "seed", c.seed);
        read(j, "workers", c.workers);
        read(j, "artifacts_dir", c.artifacts_dir);
        read(j, "report_dir", c.report_dir);

        auto svc = section(j, "service");
        reject_unknown(svc, {"host", "port", "journal"}, "service");
        read(svc, "host", c.host);
        read(svc, "port", c.port);
        read(svc, "journal", c.journal_path);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    auto base = fs::absolute(path).parent_path();
    return from_json(j, base);
}

json RunConfig::to_json() const {
    json j;
    j["log"] = {{"path", log_path},
                {"case_column", schema.case_column},
                {"activity_column", schema.activity_column},
                {"timestamp_column", schema.timestamp_column},
                {"kpi_column", schema.kpi_column ? json(*schema.kpi_column) : json(nullptr)},
                {"delimiter", std::string(1, schema.delimiter)},
                {"kpi_mode", std::string(nba::to_string(kpi_mode))},
                {"subsample_fraction", subsample_fraction},
                {"max_trace_events", max_trace_events}};
    j["split"] = {{"train_fraction", train_fraction}};
    j["predictor"] = predictor.to_json();
    j["index"] = {{"kpi_weight", kpi_weight}, {"leaf_size", leaf_size}, {"distinct_candidates", distinct_candidates}};
    j["graph"] = {{"path", graph_path}, {"strict", graph_options.strict}, {"include_wins", graph_options.include_wins}};
    j["recommender"] = {{"k", k},
                        {"threshold", threshold ? json{{"mode", "expert"}, {"value", *threshold}}
                                                : json{{"mode", "derived"}}},
                        {"check_threshold_once", check_threshold_once}};
    j["evaluation"] = {{"k_values", k_values},
                       {"min_prefix", min_prefix},
                       {"max_prefix", max_prefix},
                       {"boundary_in_time", boundary_in_time},
                       {"max_steps", max_steps}};
    j["seed"] = seed;
    j["workers"] = workers;
    j["artifacts_dir"] = artifacts_dir;
    j["report_dir"] = report_dir;
    j["service"] = {{"host", host}, {"port", port}, {"journal", journal_path}};
    return j;
}

std::string RunConfig::hash() const {
    auto j = to_json();
    // results do not depend on where files go, on parallelism or on transport
    for (const char* k : {"workers", "artifacts_dir", "report_dir", "service"}) j.erase(k);
    return fnv1a_hex(j.dump());
}

fs::path RunConfig::resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

void RunConfig::validate(bool need_log, bool need_graph) const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split.train_fraction must lie strictly between 0 and 1, got " + std::to_string(train_fraction));
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
        throw ConfigError("log.subsample_fraction must lie in (0, 1], got " + std::to_string(subsample_fraction));
    if (!(kpi_weight >= 0.0)) throw ConfigError("index.kpi_weight must be non-negative");
    if (leaf_size == 0) throw ConfigError("index.leaf_size must be positive");
    if (k == 0) throw ConfigError("recommender.k must be positive");
    if (threshold && !(*threshold > 0.0)) throw ConfigError("recommender.threshold value must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
    if (port < 0 || port > 65535) throw ConfigError("service.port must lie in 0..65535");
    if (kpi_mode == KpiMode::explicit_column && !schema.kpi_column)
        throw ConfigError("log.kpi_mode 'explicit-column' needs log.kpi_column");
    predictor.validate();
    EvalConfig ec;
    ec.k_values = k_values;
    ec.min_prefix = min_prefix;
    ec.max_prefix = max_prefix;
    ec.workers = workers;
    ec.threshold = threshold.value_or(1.0);
    ec.validate();
    if (need_log) {
        if (log_path.empty()) throw ConfigError("log.path is required");
        if (!fs::is_regular_file(resolve(log_path)))
            throw ConfigError("log.path does not name a readable file: " + resolve(log_path).string());
    }
    if (need_graph) {
        if (graph_path.empty()) throw ConfigError("graph.path is required");
        if (!fs::is_regular_file(resolve(graph_path)))
            throw ConfigError("graph.path does not name a readable file: " + resolve(graph_path).string());
    }
}

PreparedLog prepare_log(const RunConfig& cfg) {
    auto log = derive_kpi(parse_log(cfg.resolve(cfg.log_path).string(), cfg.schema), cfg.kpi_mode);
    if (cfg.subsample_fraction < 1.0 || cfg.max_trace_events > 0)
        log = subsample_log(log, cfg.subsample_fraction, cfg.max_trace_events, cfg.seed);
    auto split = split_log(log, cfg.train_fraction, cfg.seed);
    return {append_termination(split.train), append_termination(split.test), split.dropped_unseen};
}

TrainOutcome train_pipeline(const RunConfig& cfg, std::ostream* progress) {
    cfg.validate(true, false);
    auto data = prepare_log(cfg);
    if (data.train.empty()) throw SplitError("training split is empty");
    if (progress)
        *progress << "log: " << data.train.size() << " training traces, " << data.test.size() << " test traces ("
                  << data.dropped_unseen << " dropped for unseen activities), " << data.train.vocabulary().size()
                  << " activities\n";

    TrainingSummary summary;
    auto model = train(data.train, cfg.predictor, cfg.seed, &summary);
    auto index = SuffixIndex::build(data.train, cfg.kpi_weight, cfg.leaf_size);
    Threshold t = cfg.threshold ? Threshold{*cfg.threshold, ThresholdOrigin::expert} : derive_threshold(data.train);

    json history = json::array();
    for (const auto& e : summary.history)
        history.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"validation_loss", e.validation_loss}});
    json stats = {
        {"format", "nba-stats"},
        {"version", 1},
        {"config_hash", cfg.hash()},
        {"vocabulary_hash", model.vocabulary().hash()},
        {"threshold", {{"value", t.value}, {"origin", threshold_origin(t.origin)}}},
        {"kpi_normalization", model.normalizer().to_json()},
        {"index_normalization", index.params().normalizer.to_json()},
        {"split", {{"train", data.train.size()}, {"test", data.test.size()}, {"dropped_unseen", data.dropped_unseen}}},
        {"training",
         {{"epochs_run", summary.history.size()},
          {"best_epoch", summary.best_epoch},
          {"sample_count", summary.sample_count},
          {"validation_count", summary.validation_count},
          {"history", history}}},
        {"index", {{"records", index.records().size()}, {"max_length", index.params().max_length}}},
        {"seed", cfg.seed},
    };

    if (progress) {
        *progress << "trained " << summary.history.size() << " epochs on " << summary.sample_count << " samples ("
                  << summary.validation_count << " validation), best epoch " << summary.best_epoch;
        if (!summary.history.empty()) {
            const auto& last = summary.history.back();
            *progress << ", final train loss " << last.train_loss << ", accuracy " << last.train_accuracy;
        }
        *progress << "\nindex: " << index.records().size() << " suffixes, L_max " << index.params().max_length
                  << "\nthreshold: " << t.value << " (" << threshold_origin(t.origin) << ")\n";
    }

    TrainOutcome out{Artifacts{std::move(model), std::move(index), t, std::move(stats)}, std::move(summary),
                     data.train.size(), data.test.size(), data.dropped_unseen};
    return out;
}

void write_artifacts(const Artifacts& a, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create artifact directory " + dir.string() + ": " + ec.message());
    const auto config_hash = a.stats.value("config_hash", std::string());
    auto model = a.model.to_json();
    model["config_hash"] = config_hash;
    auto index = a.index.to_json();
    index["config_hash"] = config_hash;
    write_json_file(dir / kModelFile, model);
    write_json_file(dir / kIndexFile, index);
    write_json_file(dir / kVocabularyFile, {{"format", "nba-vocabulary"},
                                            {"version", 1},
                                            {"hash", a.vocabulary().hash()},
                                            {"config_hash", config_hash},
                                            {"vocabulary", a.vocabulary().to_json()}});
    write_json_file(dir / kStatsFile, a.stats);
}

Artifacts load_artifacts(const fs::path& dir) {
    const auto jm = read_json_file(dir / kModelFile, "model");
    const auto ji = read_json_file(dir / kIndexFile, "index");
    const auto jv = read_json_file(dir / kVocabularyFile, "vocabulary");
    const auto js = read_json_file(dir / kStatsFile, "stats");
    try {
        auto model = MultiTaskModel::from_json(jm);
        auto index = SuffixIndex::from_json(ji);
        const auto vocab = ActivityVocabulary::from_json(jv.at("vocabulary"));
        const auto h = model.vocabulary().hash();
        auto check = [&](const std::string& other, const char* what) {
            if (other != h)
                throw ArtifactError(std::string("vocabulary hash mismatch: model ") + h + " vs " + what + " " + other);
        };
        check(vocab.hash(), "vocabulary.json");
        check(jv.at("hash").get<std::string>(), "vocabulary.json header");
        check(index.vocabulary_hash(), "index");
        check(js.at("vocabulary_hash").get<std::string>(), "stats");
        const auto& t = js.at("threshold");
        Threshold threshold{t.at("value").get<double>(), t.at("origin").get<std::string>() == "expert"
                                                             ? ThresholdOrigin::expert
                                                             : ThresholdOrigin::derived};
        return Artifacts{std::move(model), std::move(index), threshold, js};
    } catch (const ArtifactError&) {
        throw;
    } catch (const Error& e) {
        throw ArtifactError("invalid artifacts in " + dir.string() + ": " + e.what());
    } catch (const json::exception& e) {
        throw ArtifactError("invalid artifacts in " + dir.string() + ": " + e.what());
    }
}

Engine::Engine(Artifacts artifacts, DcrGraph graph, RunConfig cfg)
    : artifacts_(std::move(artifacts)),
      graph_(std::move(graph)),
      cfg_(std::move(cfg)),
      predictor_(artifacts_.model),
      candidates_(artifacts_.index, artifacts_.vocabulary(), cfg_.distinct_candidates) {
    // an expert value in the live config overrides the trained one
    if (cfg_.threshold) artifacts_.threshold = {*cfg_.threshold, ThresholdOrigin::expert};
}

std::shared_ptr<const Engine> Engine::open(const RunConfig& cfg) {
    cfg.validate(false, true);
    auto artifacts = load_artifacts(cfg.resolve(cfg.artifacts_dir));
    DcrGraph graph = DcrGraph::load(cfg.resolve(cfg.graph_path).string(), cfg.graph_options);
    return std::make_shared<const Engine>(std::move(artifacts), std::move(graph), cfg);
}

Recommendation Engine::recommend(const RunningCase& running, std::optional<std::size_t> k) const {
    return recommend_next(context(), running, k.value_or(cfg_.k), threshold());
}

Rollout Engine::roll_out(const RunningCase& running, std::optional<std::size_t> k) const {
    RolloutOptions o;
    o.k = k.value_or(cfg_.k);
    o.threshold = threshold();
    o.max_steps = cfg_.max_steps;
    o.check_threshold_once = cfg_.check_threshold_once;
    return nba::roll_out(context(), running, o);
}

EvalReport Engine::evaluate(const EventLog& test_log) const {
    EvalConfig ec;
    ec.k_values = cfg_.k_values;
    ec.min_prefix = cfg_.min_prefix;
    ec.max_prefix = cfg_.max_prefix;
    ec.threshold = threshold();
    ec.boundary_in_time = cfg_.boundary_in_time;
    ec.check_threshold_once = cfg_.check_threshold_once;
    ec.max_steps = cfg_.max_steps;
    ec.workers = cfg_.workers;
    return nba::evaluate(test_log, context(), ec);
}

json Engine::meta() const {
    json acts = json::array();
    for (std::size_t i = 0; i < vocabulary().size(); ++i) acts.push_back(vocabulary().name_of(static_cast<int>(i)));
    return {{"schema_version", 1},
            {"vocabulary", acts},
            {"vocabulary_hash", vocabulary().hash()},
            {"artifact_config_hash", artifacts_.stats.value("config_hash", std::string())},
            {"config_hash", cfg_.hash()},
            {"threshold", {{"value", threshold()}, {"origin", threshold_origin(artifacts_.threshold.origin)}}},
            {"k", cfg_.k},
            {"graph_activities", graph_.activities()},
            {"max_suffix_length", artifacts_.model.max_suffix_length()}};
}

EvalReport evaluate_pipeline(const RunConfig& cfg, const Engine& engine) {
    cfg.validate(true, true);
    auto data = prepare_log(cfg);
    const auto h = data.train.vocabulary().hash();
    if (h != engine.vocabulary().hash())
        throw ArtifactError("vocabulary hash of the configured log split (" + h + ") does not match the artifacts (" +
                            engine.vocabulary().hash() + "); retrain or fix the config");
    auto report = engine.evaluate(data.test);
    report.metadata["config_hash"] = cfg.hash();
    report.metadata["artifact_config_hash"] = engine.artifacts().stats.value("config_hash", std::string());
    report.metadata["vocabulary_hash"] = h;
    report.metadata["threshold"] = {{"value", engine.threshold()},
                                    {"origin", threshold_origin(engine.artifacts().threshold.origin)}};
    report.metadata["seed"] = cfg.seed;
    report.metadata["test_traces"] = data.test.size();
    report.metadata["dropped_unseen"] = data.dropped_unseen;
    export_report(report, cfg.resolve(cfg.report_dir).string());
    return report;
}

} // namespace nba
