#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pbope/domain.hpp"
#include "pbope/util.hpp"

namespace pbope {

// Session log format: JSON Lines, one session per line. An optional first
// line carrying "schema_version" is the log header; simulator-produced logs
// record their RNG there so they are reproducible across implementations.

struct LogHeader {
    int schema_version = 1;
    Surface surface = Surface::Moo;
    std::optional<std::string> rng_name;
    std::optional<std::uint64_t> seed;
};

struct ParsedLog {
    LogHeader header;
    std::vector<Session> sessions;
};

inline nlohmann::json session_to_json(const Session& s) {
    nlohmann::json imps = nlohmann::json::array();
    for (const auto& imp : s.impressions)
        imps.push_back({{"item", imp.item}, {"position", imp.position}, {"clicked", imp.clicked}});
    nlohmann::json j{{"session_id", s.session_id},
                     {"day", s.day},
                     {"user_id", s.context.user},
                     {"views", s.views},
                     {"impressions", std::move(imps)}};
    if (s.context.query) j["query"] = *s.context.query;
    return j;
}

inline std::string session_to_json_line(const Session& s) { return session_to_json(s).dump(); }

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw DataError(std::string("missing field '") + name + "'");
    return *it;
}

inline std::string require_string(const nlohmann::json& j, const char* name) {
    const auto& f = require_field(j, name);
    if (!f.is_string()) throw DataError(std::string("field '") + name + "' is not a string");
    return f.get<std::string>();
}

inline long long require_int(const nlohmann::json& j, const char* name) {
    const auto& f = require_field(j, name);
    if (!f.is_number_integer()) throw DataError(std::string("field '") + name + "' is not an integer");
    return f.get<long long>();
}

}  // namespace detail

inline Session session_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("session line is not a JSON object");
    Session s;
    s.session_id = detail::require_string(j, "session_id");
    s.day = static_cast<int>(detail::require_int(j, "day"));
    s.context.user = detail::require_string(j, "user_id");
    if (auto it = j.find("query"); it != j.end() && !it->is_null())
        s.context.query = it->get<std::string>();
    s.views = static_cast<int>(detail::require_int(j, "views"));
    const auto& imps = detail::require_field(j, "impressions");
    if (!imps.is_array()) throw DataError("field 'impressions' is not an array");
    s.impressions.reserve(imps.size());
    for (const auto& e : imps) {
        Impression imp;
        imp.item = detail::require_string(e, "item");
        imp.position = static_cast<int>(detail::require_int(e, "position"));
        const auto& clicked = detail::require_field(e, "clicked");
        if (!clicked.is_boolean()) throw DataError("field 'clicked' is not a boolean");
        imp.clicked = clicked.get<bool>();
        s.impressions.push_back(std::move(imp));
    }
    validate_session(s);
    return s;
}

inline Session session_from_json_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed JSON: ") + e.what());
    }
    return session_from_json(j);
}

inline nlohmann::json header_to_json(const LogHeader& h) {
    nlohmann::json j{{"schema_version", h.schema_version}, {"surface", surface_name(h.surface)}};
    if (h.rng_name) j["rng"] = *h.rng_name;
    if (h.seed) j["seed"] = *h.seed;
    return j;
}

inline LogHeader header_from_json(const nlohmann::json& j) {
    LogHeader h;
    h.schema_version = static_cast<int>(detail::require_int(j, "schema_version"));
    if (h.schema_version != 1)
        throw DataError("unknown schema version " + std::to_string(h.schema_version));
    const std::string surface = j.value("surface", "moo");
    if (surface == "moo") h.surface = Surface::Moo;
    else if (surface == "text_search") h.surface = Surface::TextSearch;
    else throw DataError("unknown surface '" + surface + "'");
    if (auto it = j.find("rng"); it != j.end()) h.rng_name = it->get<std::string>();
    if (auto it = j.find("seed"); it != j.end()) h.seed = it->get<std::uint64_t>();
    return h;
}

// Streaming, single-pass parse: one line at a time, validated against the
// Session invariants, hard-failing on the first bad line with its number.
// The query field must be present on every session of a text-search log and
// absent on every session of a moo log.
inline ParsedLog parse_sessions_stream(std::istream& in, const std::string& source_name) {
    ParsedLog log;
    std::string line;
    long long line_no = 0;
    bool have_header = false;
    bool surface_known = false;
    auto fail = [&](const std::string& what) -> void {
        throw DataError(source_name + ":" + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (!have_header && log.sessions.empty()) {
            // A leading object with schema_version is the header line.
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                fail(std::string("malformed JSON: ") + e.what());
            }
            if (j.is_object() && j.contains("schema_version")) {
                try {
                    log.header = header_from_json(j);
                } catch (const DataError& e) {
                    fail(e.what());
                }
                have_header = true;
                surface_known = true;
                continue;
            }
        }
        Session s;
        try {
            s = session_from_json_line(line);
        } catch (const DataError& e) {
            fail(e.what());
        }
        if (!surface_known) {
            log.header.surface = s.context.query ? Surface::TextSearch : Surface::Moo;
            surface_known = true;
        }
        const bool want_query = log.header.surface == Surface::TextSearch;
        if (want_query && !s.context.query)
            fail("missing query field in a text-search log");
        if (!want_query && s.context.query)
            fail("unexpected query field in a moo log");
        log.sessions.push_back(std::move(s));
    }
    if (log.sessions.empty()) throw DataError(source_name + ": no sessions");
    return log;
}

inline ParsedLog parse_sessions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return parse_sessions_stream(in, path);
}

inline void write_sessions_stream(std::ostream& out, const LogHeader& header,
                                  const std::vector<Session>& sessions) {
    out << header_to_json(header).dump() << '\n';
    for (const auto& s : sessions) out << session_to_json_line(s) << '\n';
}

inline void write_sessions(const std::string& path, const LogHeader& header,
                           const std::vector<Session>& sessions) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_sessions_stream(out, header, sessions);
    if (!out) throw DataError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Curve files: {"theta": [...], ...}. Accepts both fit-bias output and the
// simulator sidecar.
// ---------------------------------------------------------------------------

inline PositionBiasCurve theta_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("theta"))
        throw DataError("curve file must be a JSON object with a 'theta' array");
    std::vector<double> theta = j.at("theta").get<std::vector<double>>();
    return PositionBiasCurve(std::move(theta));
}

inline PositionBiasCurve read_theta_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed JSON: " + e.what());
    }
    return theta_from_json(j);
}

// ---------------------------------------------------------------------------
// Assignment files: JSONL {"session_id":..,"item":..,"p":..}.
// ---------------------------------------------------------------------------

struct AssignmentRecord {
    std::string session_id;
    ItemId item;
    int p = 0;
};

inline std::vector<AssignmentRecord> read_assignment_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<AssignmentRecord> out;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            AssignmentRecord r;
            r.session_id = detail::require_string(j, "session_id");
            r.item = detail::require_string(j, "item");
            r.p = static_cast<int>(detail::require_int(j, "p"));
            if (r.p < 1) throw DataError("p < 1");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline void write_assignment_jsonl(const std::string& path,
                                   const std::vector<AssignmentRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    for (const auto& r : records) {
        nlohmann::json j{{"session_id", r.session_id}, {"item", r.item}, {"p", r.p}};
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Policy score files: JSONL {"user_id":..,"query":?,"item":..,"score":..}.
// ---------------------------------------------------------------------------

inline std::map<std::pair<std::string, std::string>, double> read_scores_jsonl(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::map<std::pair<std::string, std::string>, double> out;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            ContextId ctx{detail::require_string(j, "user_id"), std::nullopt};
            if (auto it = j.find("query"); it != j.end() && !it->is_null())
                ctx.query = it->get<std::string>();
            const auto& score = detail::require_field(j, "score");
            if (!score.is_number()) throw DataError("field 'score' is not a number");
            out[std::make_pair(ctx.key(), detail::require_string(j, "item"))] = score.get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed JSON: " + e.what());
    }
    return j;
}

}  // namespace pbope
