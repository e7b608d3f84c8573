#include "gfs/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gfs {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::string& prefix,
                         const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("unknown config key: " + (prefix.empty() ? key : prefix + "." + key));
        }
    }
}

template <typename T>
void read_field(const json& obj, const std::string& prefix, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for config key: " +
                          (prefix.empty() ? key : prefix + "." + key));
    }
}

json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);  // bare strings need no quotes
    return v;
}

}  // namespace

double ExploreSchedule::at(int step, double sigma) const {
    if (kind == Kind::Constant) return sigma_tilde < 0.0 ? sigma : sigma_tilde;
    if (over_steps <= 0 || step >= over_steps) return to;
    const double frac = static_cast<double>(step) / static_cast<double>(over_steps);
    return from + (to - from) * frac;
}

double TrainConfig::resolved_h() const {
    if (h > 0.0) return h;
    return (target_name == "mog" || target_name == "mog_plus") ? 0.05 : 0.01;
}

Schedule TrainConfig::make_schedule() const {
    if (schedule_kind == "ve") return Schedule::ve(n_steps, resolved_h(), sigma);
    if (schedule_kind == "vp") return Schedule::vp(n_steps, sigma, beta_start, beta_end);
    throw ConfigError("schedule.kind must be \"ve\" or \"vp\"");
}

ModelConfig TrainConfig::make_model_config(std::size_t target_dim) const {
    ModelConfig m;
    m.dim = target_dim;
    m.time_embed_dim = time_embed_dim;
    m.hidden = hidden;
    m.use_score = use_score;
    m.score_clip = score_clip;
    m.freq_min = freq_min;
    m.freq_max = freq_max;
    m.activation = activation;
    return m;
}

void TrainConfig::validate() const {
    if (target_name.empty()) throw ConfigError("missing config key: target.name");
    try {
        (void)make_target(target_name);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("target.name: ") + e.what());
    }
    Objective obj;
    try {
        obj = parse_objective(objective_name);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("objective.name: ") + e.what());
    }
    if (obj == Objective::SubTBFullPath) {
        throw ConfigError("objective.name: subtb_full is a diagnostic objective (gradvar only)");
    }
    if (obj == Objective::KlPis && schedule_kind != "ve") {
        throw ConfigError("objective.name: kl_pis requires schedule.kind = ve");
    }
    if (obj == Objective::KlDds && schedule_kind != "vp") {
        throw ConfigError("objective.name: kl_dds requires schedule.kind = vp");
    }
    try {
        (void)make_schedule();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    }
    try {
        make_model_config(2).validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    if (!(lambda > 0.0)) throw ConfigError("objective.lambda must be positive");
    if (!(lr_drift > 0.0)) throw ConfigError("trainer.lr_drift must be positive");
    if (!(lr_flow > 0.0)) throw ConfigError("trainer.lr_flow must be positive");
    if (batch < 1) throw ConfigError("trainer.batch must be >= 1");
    if (total_steps < 1) throw ConfigError("trainer.total_steps must be >= 1");
    if (eval_every < 1) throw ConfigError("trainer.eval_every must be >= 1");
    if (eval_particles < 1) throw ConfigError("trainer.eval_particles must be >= 1");
    if (shard_size < 1) throw ConfigError("trainer.shard_size must be >= 1");
    if (threads < 0) throw ConfigError("trainer.threads must be >= 0");

    if (explore.kind == ExploreSchedule::Kind::Constant) {
        if (explore.sigma_tilde >= 0.0 && explore.sigma_tilde < sigma) {
            throw ConfigError("trainer.explore.sigma_tilde must be >= schedule.sigma");
        }
    } else {
        if (explore.from < sigma || explore.to < sigma) {
            throw ConfigError("trainer.explore: annealed sigma_tilde must stay >= schedule.sigma");
        }
        if (explore.over_steps < 1) {
            throw ConfigError("trainer.explore.over_steps must be >= 1");
        }
    }
    const bool is_kl = obj == Objective::KlPis || obj == Objective::KlDds;
    if (is_kl) {
        const bool on_policy = explore.kind == ExploreSchedule::Kind::Constant &&
                               (explore.sigma_tilde < 0.0 || explore.sigma_tilde == sigma);
        if (!on_policy) {
            throw ConfigError("trainer.explore: kl objectives train on-policy (sigma_tilde == sigma)");
        }
    }
}

TrainConfig config_from_json_text(const std::string& text) {
    json root = json::parse(text, nullptr, false);
    if (root.is_discarded()) throw ConfigError("config is not valid JSON");
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown_keys(root, "", {"target", "schedule", "model", "objective", "trainer"});

    TrainConfig c;
    if (root.contains("target")) {
        const json& t = root["target"];
        reject_unknown_keys(t, "target", {"name"});
        read_field(t, "target", "name", c.target_name);
    }
    if (c.target_name.empty()) throw ConfigError("missing config key: target.name");

    if (root.contains("schedule")) {
        const json& s = root["schedule"];
        reject_unknown_keys(s, "schedule",
                            {"kind", "n_steps", "h", "sigma", "beta_start", "beta_end"});
        read_field(s, "schedule", "kind", c.schedule_kind);
        read_field(s, "schedule", "n_steps", c.n_steps);
        read_field(s, "schedule", "h", c.h);
        read_field(s, "schedule", "sigma", c.sigma);
        read_field(s, "schedule", "beta_start", c.beta_start);
        read_field(s, "schedule", "beta_end", c.beta_end);
    }
    if (root.contains("model")) {
        const json& m = root["model"];
        reject_unknown_keys(m, "model",
                            {"time_embed_dim", "hidden", "use_score", "score_clip", "freq_min",
                             "freq_max", "activation"});
        read_field(m, "model", "time_embed_dim", c.time_embed_dim);
        read_field(m, "model", "hidden", c.hidden);
        read_field(m, "model", "use_score", c.use_score);
        read_field(m, "model", "score_clip", c.score_clip);
        read_field(m, "model", "freq_min", c.freq_min);
        read_field(m, "model", "freq_max", c.freq_max);
        read_field(m, "model", "activation", c.activation);
    }
    if (root.contains("objective")) {
        const json& o = root["objective"];
        reject_unknown_keys(o, "objective", {"name", "lambda"});
        read_field(o, "objective", "name", c.objective_name);
        read_field(o, "objective", "lambda", c.lambda);
    }
    if (root.contains("trainer")) {
        const json& t = root["trainer"];
        reject_unknown_keys(t, "trainer",
                            {"lr_drift", "lr_flow", "batch", "total_steps", "eval_every",
                             "eval_particles", "seed", "shard_size", "threads", "explore"});
        read_field(t, "trainer", "lr_drift", c.lr_drift);
        read_field(t, "trainer", "lr_flow", c.lr_flow);
        read_field(t, "trainer", "batch", c.batch);
        read_field(t, "trainer", "total_steps", c.total_steps);
        read_field(t, "trainer", "eval_every", c.eval_every);
        read_field(t, "trainer", "eval_particles", c.eval_particles);
        read_field(t, "trainer", "seed", c.seed);
        read_field(t, "trainer", "shard_size", c.shard_size);
        read_field(t, "trainer", "threads", c.threads);
        if (t.contains("explore")) {
            const json& e = t["explore"];
            reject_unknown_keys(e, "trainer.explore",
                                {"kind", "sigma_tilde", "from", "to", "over_steps"});
            std::string kind = "constant";
            read_field(e, "trainer.explore", "kind", kind);
            if (kind == "constant") {
                c.explore.kind = ExploreSchedule::Kind::Constant;
            } else if (kind == "linear_anneal") {
                c.explore.kind = ExploreSchedule::Kind::LinearAnneal;
            } else {
                throw ConfigError("trainer.explore.kind must be constant or linear_anneal");
            }
            read_field(e, "trainer.explore", "sigma_tilde", c.explore.sigma_tilde);
            read_field(e, "trainer.explore", "from", c.explore.from);
            read_field(e, "trainer.explore", "to", c.explore.to);
            read_field(e, "trainer.explore", "over_steps", c.explore.over_steps);
        }
    }
    c.validate();
    return c;
}

std::string config_to_json_text(const TrainConfig& c) {
    json root;
    root["target"] = {{"name", c.target_name}};
    root["schedule"] = {{"kind", c.schedule_kind}, {"n_steps", c.n_steps}, {"h", c.resolved_h()},
                        {"sigma", c.sigma},        {"beta_start", c.beta_start},
                        {"beta_end", c.beta_end}};
    root["model"] = {{"time_embed_dim", c.time_embed_dim},
                     {"hidden", c.hidden},
                     {"use_score", c.use_score},
                     {"score_clip", c.score_clip},
                     {"freq_min", c.freq_min},
                     {"freq_max", c.freq_max},
                     {"activation", c.activation}};
    root["objective"] = {{"name", c.objective_name}, {"lambda", c.lambda}};
    json explore;
    if (c.explore.kind == ExploreSchedule::Kind::Constant) {
        explore = {{"kind", "constant"},
                   {"sigma_tilde", c.explore.sigma_tilde < 0.0 ? c.sigma : c.explore.sigma_tilde}};
    } else {
        explore = {{"kind", "linear_anneal"},
                   {"sigma_tilde", c.explore.to},
                   {"from", c.explore.from},
                   {"to", c.explore.to},
                   {"over_steps", c.explore.over_steps}};
    }
    root["trainer"] = {{"lr_drift", c.lr_drift},
                       {"lr_flow", c.lr_flow},
                       {"batch", c.batch},
                       {"total_steps", c.total_steps},
                       {"eval_every", c.eval_every},
                       {"eval_particles", c.eval_particles},
                       {"seed", c.seed},
                       {"shard_size", c.shard_size},
                       {"threads", c.threads},
                       {"explore", explore}};
    return root.dump(2) + "\n";
}

TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();

    json root = json::parse(buf.str(), nullptr, false);
    if (root.is_discarded()) throw ConfigError("config is not valid JSON: " + path);

    for (const std::string& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override must look like key.path=value: " + item);
        }
        const std::string path_part = item.substr(0, eq);
        json* node = &root;
        std::size_t start = 0;
        std::vector<std::string> parts;
        while (start <= path_part.size()) {
            const auto dot = path_part.find('.', start);
            if (dot == std::string::npos) {
                parts.push_back(path_part.substr(start));
                break;
            }
            parts.push_back(path_part.substr(start, dot - start));
            start = dot + 1;
        }
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            node = &(*node)[parts[i]];
        }
        (*node)[parts.back()] = parse_override_value(item.substr(eq + 1));
    }
    return config_from_json_text(root.dump());
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("rename failed for " + path);
    }
}

}  // namespace gfs
