#include "nba/dcr.hpp"

#include <algorithm>
#include <fstream>

#include "nba/errors.hpp"
#include "nba/eventlog.hpp"

namespace nba {

namespace {

constexpr std::pair<RelationType, std::string_view> kRelationNames[] = {
    {RelationType::condition, "condition"}, {RelationType::response, "response"}, {RelationType::include, "include"},
    {RelationType::exclude, "exclude"},     {RelationType::milestone, "milestone"},
};

} // namespace

RelationType relation_type_from_string(std::string_view s) {
    for (const auto& [t, name] : kRelationNames)
        if (name == s) return t;
    throw SchemaError("unknown relation type '" + std::string(s) + "'");
}

std::string_view to_string(RelationType t) {
    for (const auto& [rt, name] : kRelationNames)
        if (rt == t) return name;
    return "?";
}

std::string_view to_string(Verdict v) { return v == Verdict::not_enabled ? "not-enabled" : "not-accepting"; }

ConformanceVerdict ConformanceVerdict::fail(std::size_t step, Verdict reason, std::string detail) {
    ConformanceVerdict v;
    v.conformant = false;
    v.failing_step = step;
    v.reason = reason;
    v.detail = std::move(detail);
    return v;
}

DcrGraph::DcrGraph() : DcrGraph({}, {}) {}

DcrGraph::DcrGraph(std::vector<std::string> activities, std::vector<Relation> relations, InitialMarking initial,
                   DcrOptions options)
    : activities_(std::move(activities)), options_(options) {
    if (std::find(activities_.begin(), activities_.end(), kEndActivity) == activities_.end())
        activities_.emplace_back(kEndActivity);
    for (std::size_t i = 0; i < activities_.size(); ++i) {
        if (activities_[i].empty()) throw SchemaError("empty activity name in graph");
        if (!lookup_.emplace(activities_[i], i).second)
            throw SchemaError("duplicate activity '" + activities_[i] + "' in graph");
    }
    end_ = lookup_.at(std::string(kEndActivity));

    adj_.resize(activities_.size());
    for (auto& r : relations) {
        auto s = find(r.source), t = find(r.target);
        if (!s) throw SchemaError("relation source '" + r.source + "' is not a declared activity");
        if (!t) throw SchemaError("relation target '" + r.target + "' is not a declared activity");
        if (std::find(relations_.begin(), relations_.end(), r) != relations_.end()) continue;
        switch (r.type) {
            case RelationType::condition: adj_[*t].conditions_in.push_back(*s); break;
            case RelationType::milestone: adj_[*t].milestones_in.push_back(*s); break;
            case RelationType::response: adj_[*s].responses.push_back(*t); break;
            case RelationType::include: adj_[*s].includes.push_back(*t); break;
            case RelationType::exclude: adj_[*s].excludes.push_back(*t); break;
        }
        relations_.push_back(std::move(r));
    }

    const auto n = activities_.size();
    auto flags = [&](const std::optional<std::vector<std::string>>& names, char dflt) {
        std::vector<char> out(n, dflt);
        if (!names) return out;
        std::fill(out.begin(), out.end(), 0);
        for (const auto& a : *names) {
            auto i = find(a);
            if (!i) throw SchemaError("initial marking names undeclared activity '" + a + "'");
            out[*i] = 1;
        }
        return out;
    };
    initial_.executed = flags(initial.executed, 0);
    initial_.included = flags(initial.included, 1);
    initial_.pending = flags(initial.pending, 0);
}

DcrGraph DcrGraph::from_json(const nlohmann::json& j, DcrOptions options) {
    try {
        std::vector<std::string> activities = j.at("activities").get<std::vector<std::string>>();
        std::vector<Relation> relations;
        if (j.contains("relations"))
            for (const auto& r : j.at("relations"))
                relations.push_back({relation_type_from_string(r.at("type").get<std::string>()),
                                     r.at("source").get<std::string>(), r.at("target").get<std::string>()});
        InitialMarking init;
        if (j.contains("initialMarking")) {
            const auto& m = j.at("initialMarking");
            auto field = [&](const char* key, std::optional<std::vector<std::string>>& out) {
                if (m.contains(key)) out = m.at(key).get<std::vector<std::string>>();
            };
            field("executed", init.executed);
            field("included", init.included);
            field("pending", init.pending);
        }
        return DcrGraph(std::move(activities), std::move(relations), std::move(init), options);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed DCR graph: ") + e.what());
    }
}

DcrGraph DcrGraph::load(const std::string& path, DcrOptions options) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open DCR graph '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("malformed DCR graph '" + path + "': " + e.what());
    }
    return from_json(j, options);
}

nlohmann::json DcrGraph::to_json() const {
    nlohmann::json rels = nlohmann::json::array();
    for (const auto& r : relations_) rels.push_back({{"type", to_string(r.type)}, {"source", r.source}, {"target", r.target}});
    return {{"activities", activities_}, {"relations", rels}, {"initialMarking", marking_to_json(initial_)}};
}

bool DcrGraph::declares(std::string_view activity) const { return find(activity).has_value(); }

std::optional<std::size_t> DcrGraph::find(std::string_view activity) const {
    auto it = lookup_.find(std::string(activity));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

std::size_t DcrGraph::index_of(std::string_view activity) const {
    auto i = find(activity);
    if (!i) throw DomainError("activity '" + std::string(activity) + "' is not declared in the graph");
    return *i;
}

bool DcrGraph::is_accepting(const Marking& m) const {
    for (std::size_t i = 0; i < activities_.size(); ++i)
        if (m.pending[i] && m.included[i]) return false;
    return true;
}

std::string DcrGraph::why_not_enabled(const Marking& m, std::size_t a) const {
    if (is_terminated(m)) return "the case has already ended";
    if (!m.included[a]) return "'" + activities_[a] + "' is excluded";
    for (auto c : adj_[a].conditions_in)
        if (m.included[c] && !m.executed[c]) return "condition '" + activities_[c] + "' has not been executed";
    for (auto s : adj_[a].milestones_in)
        if (m.included[s] && m.pending[s]) return "milestone '" + activities_[s] + "' is still pending";
    if (a == end_ && !is_accepting(m)) return "the marking is not accepting";
    return {};
}

bool DcrGraph::enabled(const Marking& m, std::size_t a) const {
    if (a >= activities_.size()) throw DomainError("activity index out of range");
    return why_not_enabled(m, a).empty();
}

bool DcrGraph::enabled(const Marking& m, std::string_view activity) const { return enabled(m, index_of(activity)); }

Marking DcrGraph::apply(const Marking& m, std::size_t a) const {
    Marking out = m;
    out.executed[a] = 1;
    out.pending[a] = 0;
    for (auto t : adj_[a].responses) out.pending[t] = 1;
    if (options_.include_wins) {
        for (auto t : adj_[a].excludes) out.included[t] = 0;
        for (auto t : adj_[a].includes) out.included[t] = 1;
    } else {
        for (auto t : adj_[a].includes) out.included[t] = 1;
        for (auto t : adj_[a].excludes) out.included[t] = 0;
    }
    return out;
}

Marking DcrGraph::execute(const Marking& m, std::size_t a) const {
    if (a >= activities_.size()) throw DomainError("activity index out of range");
    auto why = why_not_enabled(m, a);
    if (!why.empty()) throw ExecutionError("'" + activities_[a] + "' is not enabled: " + why);
    return apply(m, a);
}

Marking DcrGraph::execute(const Marking& m, std::string_view activity) const { return execute(m, index_of(activity)); }

std::vector<std::string> DcrGraph::enabled_activities(const Marking& m) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < activities_.size(); ++i)
        if (why_not_enabled(m, i).empty()) out.push_back(activities_[i]);
    return out;
}

ReplayResult DcrGraph::replay(std::span<const std::string> prefix) const {
    ReplayResult r{initial_, ConformanceVerdict::ok()};
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        auto a = find(prefix[i]);
        if (!a) {
            if (is_terminated(r.marking)) {
                r.verdict = ConformanceVerdict::fail(i, Verdict::not_enabled, "the case has already ended");
                return r;
            }
            if (options_.strict) {
                r.verdict = ConformanceVerdict::fail(i, Verdict::not_enabled, "'" + prefix[i] + "' is not declared in the graph");
                return r;
            }
            continue;
        }
        auto why = why_not_enabled(r.marking, *a);
        if (!why.empty()) {
            const bool only_acceptance = *a == end_ && why == "the marking is not accepting";
            r.verdict = ConformanceVerdict::fail(i, only_acceptance ? Verdict::not_accepting : Verdict::not_enabled, why);
            return r;
        }
        r.marking = apply(r.marking, *a);
    }
    return r;
}

ConformanceVerdict DcrGraph::simulate_suffix(const Marking& m, std::span<const std::string> suffix) const {
    Marking cur = m;
    for (std::size_t i = 0; i < suffix.size(); ++i) {
        if (is_terminated(cur)) return ConformanceVerdict::fail(i, Verdict::not_enabled, "the case has already ended");
        auto a = find(suffix[i]);
        if (!a) {
            if (options_.strict)
                return ConformanceVerdict::fail(i, Verdict::not_enabled, "'" + suffix[i] + "' is not declared in the graph");
            continue;
        }
        auto why = why_not_enabled(cur, *a);
        if (!why.empty()) {
            const bool only_acceptance = *a == end_ && why == "the marking is not accepting";
            return ConformanceVerdict::fail(i, only_acceptance ? Verdict::not_accepting : Verdict::not_enabled, why);
        }
        // END only tests acceptance; nothing may follow it
        if (*a == end_) {
            if (i + 1 < suffix.size())
                return ConformanceVerdict::fail(i + 1, Verdict::not_enabled, "activity after the end of the case");
            break;
        }
        cur = apply(cur, *a);
    }
    return ConformanceVerdict::ok();
}

nlohmann::json DcrGraph::marking_to_json(const Marking& m) const {
    auto names = [&](const std::vector<char>& flags) {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < flags.size() && i < activities_.size(); ++i)
            if (flags[i]) out.push_back(activities_[i]);
        return out;
    };
    return {{"executed", names(m.executed)}, {"included", names(m.included)}, {"pending", names(m.pending)}};
}

} // namespace nba
