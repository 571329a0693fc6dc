#include "erar/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "erar/envs.hpp"
#include "erar/errors.hpp"

namespace erar {

using nlohmann::json;

namespace {

json require(const json& j, const char* key) {
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
    return j.at(key);
}

std::vector<double> number_row(const json& j, const std::string& where, std::size_t want) {
    if (!j.is_array() || j.size() != want)
        throw std::invalid_argument(where + ": expected an array of " + std::to_string(want) +
                                    " numbers");
    std::vector<double> out;
    out.reserve(want);
    for (const json& v : j) {
        if (!v.is_number()) throw std::invalid_argument(where + ": non-numeric entry");
        out.push_back(v.get<double>());
    }
    return out;
}

} // namespace

std::string mdp_to_json_string(const TabularMdp& mdp) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    json trans = json::array();
    json rewards = json::array();
    json prior = json::array();
    for (int s = 0; s < S; ++s) {
        json per_action = json::array();
        json reward_row = json::array();
        json prior_row = json::array();
        for (int a = 0; a < A; ++a) {
            per_action.push_back(mdp.dense_row(s, a));
            reward_row.push_back(mdp.reward(s, a));
            prior_row.push_back(mdp.prior()(s, a));
        }
        trans.push_back(std::move(per_action));
        rewards.push_back(std::move(reward_row));
        prior.push_back(std::move(prior_row));
    }
    json j{{"num_states", S},
           {"num_actions", A},
           {"transitions", std::move(trans)},
           {"rewards", std::move(rewards)},
           {"prior", std::move(prior)}};
    return j.dump(2);
}

TabularMdp mdp_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("MDP file is not valid JSON: ") + e.what());
    }
    const int S = require(j, "num_states").get<int>();
    const int A = require(j, "num_actions").get<int>();
    if (S < 1 || A < 1) throw std::invalid_argument("num_states and num_actions must be >= 1");

    const json jt = require(j, "transitions");
    const json jr = require(j, "rewards");
    const json jp = require(j, "prior");
    if (!jt.is_array() || static_cast<int>(jt.size()) != S)
        throw std::invalid_argument("transitions: expected " + std::to_string(S) + " state entries");
    if (!jr.is_array() || static_cast<int>(jr.size()) != S)
        throw std::invalid_argument("rewards: expected " + std::to_string(S) + " state rows");
    if (!jp.is_array() || static_cast<int>(jp.size()) != S)
        throw std::invalid_argument("prior: expected " + std::to_string(S) + " state rows");

    std::vector<double> transitions(static_cast<std::size_t>(S) * A * S);
    std::vector<double> rewards(static_cast<std::size_t>(S) * A);
    TabularPolicy prior;
    prior.num_states = S;
    prior.num_actions = A;
    prior.probs.resize(static_cast<std::size_t>(S) * A);
    for (int s = 0; s < S; ++s) {
        const std::string at_state = "state " + std::to_string(s);
        if (!jt[s].is_array() || static_cast<int>(jt[s].size()) != A)
            throw std::invalid_argument("transitions/" + at_state + ": expected " +
                                        std::to_string(A) + " action rows");
        for (int a = 0; a < A; ++a) {
            const std::vector<double> row = number_row(
                jt[s][a], "transitions/" + at_state + "/action " + std::to_string(a), S);
            std::copy(row.begin(), row.end(),
                      transitions.begin() + (static_cast<std::size_t>(s) * A + a) * S);
        }
        const std::vector<double> rrow = number_row(jr[s], "rewards/" + at_state, A);
        std::copy(rrow.begin(), rrow.end(), rewards.begin() + static_cast<std::size_t>(s) * A);
        const std::vector<double> prow = number_row(jp[s], "prior/" + at_state, A);
        std::copy(prow.begin(), prow.end(), prior.probs.begin() + static_cast<std::size_t>(s) * A);
    }
    return TabularMdp(S, A, std::move(transitions), std::move(rewards), std::move(prior));
}

TabularMdp load_mdp_file(const std::string& path) {
    return mdp_from_json_string(read_file(path));
}

void save_mdp_file(const TabularMdp& mdp, const std::string& path) {
    atomic_write_file(path, mdp_to_json_string(mdp) + "\n");
}

std::string config_to_json_string(const TrainerConfig& c) {
    json j{{"inv_temperature", c.inv_temperature},
           {"lr_actor", c.lr_actor},
           {"lr_critic", c.lr_critic},
           {"lr_theta", c.lr_theta},
           {"polyak", c.polyak},
           {"batch_size", c.batch_size},
           {"buffer_capacity", c.buffer_capacity},
           {"reset_scale", c.reset_scale},
           {"grad_clip", c.grad_clip},
           {"anchor_state", c.anchor_state},
           {"anchor_action", c.anchor_action},
           {"train_freq", c.train_freq},
           {"gradient_steps", c.gradient_steps},
           {"seed", c.seed},
           {"total_steps", c.total_steps},
           {"eval_interval", c.eval_interval},
           {"env", c.env},
           {"hidden", c.hidden},
           {"prior", c.prior},
           {"penalty_all_rewards", c.penalty_all_rewards},
           {"target_action_samples", c.target_action_samples},
           {"learning_starts", c.learning_starts},
           {"eval_episodes", c.eval_episodes},
           {"eval_episode_len", c.eval_episode_len}};
    return j.dump(2);
}

TrainerConfig config_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    TrainerConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "inv_temperature") c.inv_temperature = value.get<double>();
        else if (key == "lr_actor") c.lr_actor = value.get<double>();
        else if (key == "lr_critic") c.lr_critic = value.get<double>();
        else if (key == "lr_theta") c.lr_theta = value.get<double>();
        else if (key == "polyak") c.polyak = value.get<double>();
        else if (key == "batch_size") c.batch_size = value.get<int>();
        else if (key == "buffer_capacity") c.buffer_capacity = value.get<std::size_t>();
        else if (key == "reset_scale") c.reset_scale = value.get<double>();
        else if (key == "grad_clip") c.grad_clip = value.get<double>();
        else if (key == "anchor_state") c.anchor_state = value.get<std::vector<double>>();
        else if (key == "anchor_action") c.anchor_action = value.get<std::vector<double>>();
        else if (key == "train_freq") c.train_freq = value.get<int>();
        else if (key == "gradient_steps") c.gradient_steps = value.get<int>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "total_steps") c.total_steps = value.get<long>();
        else if (key == "eval_interval") c.eval_interval = value.get<long>();
        else if (key == "env") c.env = value.get<std::string>();
        else if (key == "hidden") c.hidden = value.get<std::vector<int>>();
        else if (key == "prior") c.prior = value.get<std::string>();
        else if (key == "penalty_all_rewards") c.penalty_all_rewards = value.get<bool>();
        else if (key == "target_action_samples") c.target_action_samples = value.get<int>();
        else if (key == "learning_starts") c.learning_starts = value.get<long>();
        else if (key == "eval_episodes") c.eval_episodes = value.get<int>();
        else if (key == "eval_episode_len") c.eval_episode_len = value.get<long>();
        else throw std::invalid_argument("config: unknown field '" + key + "'");
    }
    return c;
}

TrainerConfig load_config_file(const std::string& path) {
    return config_from_json_string(read_file(path));
}

std::string verify_report_to_json_string(const VerifyReport& report) {
    json checks = json::array();
    for (const CheckResult& c : report.checks) {
        checks.push_back(json{{"name", c.name},
                              {"threshold", c.threshold},
                              {"worst", c.worst},
                              {"violations", c.violations},
                              {"expected_failure", c.expected_failure},
                              {"failing_seeds", c.failing_seeds}});
    }
    json j{{"mdps_checked", report.mdps_checked},
           {"all_pass", report.all_pass},
           {"checks", std::move(checks)}};
    return j.dump(2);
}

std::string solve_result_to_json_string(const PolicyIterationResult& result,
                                        double inv_temperature) {
    const int S = result.value.num_states;
    const int A = result.value.num_actions;
    json policy = json::array();
    json q = json::array();
    for (int s = 0; s < S; ++s) {
        json prow = json::array(), qrow = json::array();
        for (int a = 0; a < A; ++a) {
            prow.push_back(result.policy(s, a));
            qrow.push_back(result.value.q_at(s, a));
        }
        policy.push_back(std::move(prow));
        q.push_back(std::move(qrow));
    }
    json j{{"inv_temperature", inv_temperature},
           {"theta", result.value.theta},
           {"anchor", {{"state", result.value.anchor.state}, {"action", result.value.anchor.action}}},
           {"policy", std::move(policy)},
           {"q", std::move(q)},
           {"report",
            {{"iterations", result.report.iterations},
             {"final_residual", result.report.final_residual},
             {"converged", result.report.converged},
             {"theta_history", result.report.theta_history}}}};
    return j.dump(2);
}

void write_manifest(const RunManifest& m, const std::string& path) {
    json artifacts = json::object();
    for (const auto& [kind, p] : m.artifacts) artifacts[kind] = p;
    json j{{"command", m.command},
           {"config", json::parse(m.config_json.empty() ? "{}" : m.config_json)},
           {"seed", m.seed},
           {"artifacts", std::move(artifacts)},
           {"wall_ms", m.wall_ms}};
    atomic_write_file(path, j.dump(2) + "\n");
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void atomic_write_file(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::invalid_argument("cannot write file: " + tmp);
        out << content;
        if (!out.flush()) throw std::invalid_argument("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::invalid_argument("cannot rename " + tmp + " to " + path);
}

// ---------------------------------------------------------------------------
// Trainer checkpoints (format erar-checkpoint-v1).
// ---------------------------------------------------------------------------

struct TrainerCheckpointAccess {
    static json net_to_json(const Mlp& net) {
        return json{{"sizes", net.layer_sizes()},
                    {"params", std::vector<double>(net.params().begin(), net.params().end())}};
    }
    static void net_from_json(Mlp& net, const json& j) {
        const auto sizes = j.at("sizes").get<std::vector<int>>();
        if (sizes != net.layer_sizes())
            throw std::invalid_argument("checkpoint: network architecture mismatch");
        const auto params = j.at("params").get<std::vector<double>>();
        if (params.size() != net.params().size())
            throw std::invalid_argument("checkpoint: parameter count mismatch");
        std::copy(params.begin(), params.end(), net.params().begin());
    }
    static json adam_to_json(const AdamState& a) {
        return json{
            {"step", a.step_count()},
            {"m", std::vector<double>(a.first_moment().begin(), a.first_moment().end())},
            {"v", std::vector<double>(a.second_moment().begin(), a.second_moment().end())}};
    }
    static void adam_from_json(AdamState& a, const json& j) {
        a.restore(j.at("step").get<long>(), j.at("m").get<std::vector<double>>(),
                  j.at("v").get<std::vector<double>>());
    }
    static json transition_to_json(const Transition& t) {
        return json{{"s", t.state},
                    {"a", t.action},
                    {"r", t.reward},
                    {"s2", t.next_state},
                    {"term", t.terminated}};
    }
    static Transition transition_from_json(const json& j) {
        Transition t;
        t.state = j.at("s").get<std::vector<double>>();
        t.action = j.at("a").get<std::vector<double>>();
        t.reward = j.at("r").get<double>();
        t.next_state = j.at("s2").get<std::vector<double>>();
        t.terminated = j.at("term").get<bool>();
        return t;
    }

    static void save(const Trainer& t, const std::string& path) {
        const TrainerState& st = t.state_;
        json buffer_items = json::array();
        for (std::size_t i = 0; i < st.buffer.size(); ++i)
            buffer_items.push_back(transition_to_json(st.buffer.slot(i)));
        json j{{"format", "erar-checkpoint-v1"},
               {"config", json::parse(config_to_json_string(t.config_))},
               {"env", {{"name", t.env_->name()}, {"state", t.env_->save_state()}}},
               {"env_steps", st.env_steps},
               {"reset_count", st.reset_count},
               {"theta", st.theta},
               {"reset_penalty", st.reset_penalty},
               {"obs", t.obs_},
               {"rng", t.rng_.save_state()},
               {"nets",
                {{"actor", net_to_json(st.actor)},
                 {"critic1", net_to_json(st.critic1)},
                 {"critic2", net_to_json(st.critic2)},
                 {"target1", net_to_json(st.target1)},
                 {"target2", net_to_json(st.target2)}}},
               {"adam",
                {{"actor", adam_to_json(st.opt_actor)},
                 {"critic1", adam_to_json(st.opt_critic1)},
                 {"critic2", adam_to_json(st.opt_critic2)},
                 {"theta", adam_to_json(st.opt_theta)}}},
               {"buffer",
                {{"capacity", st.buffer.capacity()},
                 {"cursor", st.buffer.cursor()},
                 {"full", st.buffer.full()},
                 {"items", std::move(buffer_items)}}}};
        atomic_write_file(path, j.dump() + "\n");
    }

    static Trainer load(const std::string& path) {
        json j;
        try {
            j = json::parse(read_file(path));
        } catch (const json::parse_error& e) {
            throw std::invalid_argument(std::string("checkpoint is not valid JSON: ") + e.what());
        }
        if (require(j, "format").get<std::string>() != "erar-checkpoint-v1")
            throw std::invalid_argument("checkpoint: unsupported format tag");
        const TrainerConfig cfg = config_from_json_string(j.at("config").dump());
        Trainer t(make_env(cfg.env), cfg);
        TrainerState& st = t.state_;

        const json& env = j.at("env");
        if (env.at("name").get<std::string>() != t.env_->name())
            throw std::invalid_argument("checkpoint: environment name mismatch");
        t.env_->load_state(env.at("state").get<std::vector<std::string>>());

        st.env_steps = j.at("env_steps").get<long>();
        st.reset_count = j.at("reset_count").get<long>();
        st.theta = j.at("theta").get<double>();
        st.reset_penalty = j.at("reset_penalty").get<double>();
        t.obs_ = j.at("obs").get<std::vector<double>>();
        t.rng_.load_state(j.at("rng").get<std::string>());

        const json& nets = j.at("nets");
        net_from_json(st.actor, nets.at("actor"));
        net_from_json(st.critic1, nets.at("critic1"));
        net_from_json(st.critic2, nets.at("critic2"));
        net_from_json(st.target1, nets.at("target1"));
        net_from_json(st.target2, nets.at("target2"));

        const json& adam = j.at("adam");
        adam_from_json(st.opt_actor, adam.at("actor"));
        adam_from_json(st.opt_critic1, adam.at("critic1"));
        adam_from_json(st.opt_critic2, adam.at("critic2"));
        adam_from_json(st.opt_theta, adam.at("theta"));

        const json& buf = j.at("buffer");
        if (buf.at("capacity").get<std::size_t>() != cfg.buffer_capacity)
            throw std::invalid_argument("checkpoint: buffer capacity mismatch");
        std::vector<Transition> items;
        for (const json& item : buf.at("items")) items.push_back(transition_from_json(item));
        st.buffer.restore(std::move(items), buf.at("cursor").get<std::size_t>(),
                          buf.at("full").get<bool>());
        return t;
    }
};

void Trainer::save_checkpoint(const std::string& path) const {
    TrainerCheckpointAccess::save(*this, path);
}

Trainer Trainer::load_checkpoint(const std::string& path) {
    return TrainerCheckpointAccess::load(path);
}

} // namespace erar
