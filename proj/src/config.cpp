#include "scribble/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "scribble/error.hpp"

namespace scribble::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& v, const std::string& key) {
    T out{};
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError("'" + key + "': not a valid number: '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Key {
    std::function<void(CliConfig&, const std::string&, const fs::path&)> set;
    std::function<std::string(const CliConfig&)> get;
};

template <class T>
Key number(T training::TrainConfig::*field) {
    return {[field](CliConfig& c, const std::string& v, const fs::path&) { c.train.*field = parse_number<T>(v, ""); },
            [field](const CliConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return fmt(c.train.*field);
                else return std::to_string(c.train.*field);
            }};
}

const std::map<std::string, Key>& keys() {
    using TC = training::TrainConfig;
    static const std::map<std::string, Key> table = [] {
        std::map<std::string, Key> k;
        k["data"] = {[](CliConfig& c, const std::string& v, const fs::path& base) { c.data = fs::path(v).is_absolute() ? fs::path(v) : base / v; },
                     [](const CliConfig& c) { return c.data.string(); }};
        k["out"] = {[](CliConfig& c, const std::string& v, const fs::path& base) { c.out = fs::path(v).is_absolute() ? fs::path(v) : base / v; },
                    [](const CliConfig& c) { return c.out.string(); }};
        k["precision"] = {[](CliConfig& c, const std::string& v, const fs::path&) {
                              if (v == "f32") c.precision = Precision::f32;
                              else if (v == "f64") c.precision = Precision::f64;
                              else throw ConfigError("'precision': expected f32 or f64, got '" + v + "'");
                          },
                          [](const CliConfig& c) { return std::string(c.precision == Precision::f32 ? "f32" : "f64"); }};
        k["stage1_epochs"] = number(&TC::stage1_epochs);
        k["stage2_epochs"] = number(&TC::stage2_epochs);
        k["batch_size"] = number(&TC::batch_size);
        k["learning_rate"] = number(&TC::learning_rate);
        k["decay"] = number(&TC::decay);
        k["decay_mode"] = {[](CliConfig& c, const std::string& v, const fs::path&) {
                               if (v == "weight") c.train.decay_mode = training::DecayMode::weight;
                               else if (v == "linear") c.train.decay_mode = training::DecayMode::linear;
                               else throw ConfigError("'decay_mode': expected weight or linear, got '" + v + "'");
                           },
                           [](const CliConfig& c) { return std::string(c.train.decay_mode == training::DecayMode::weight ? "weight" : "linear"); }};
        k["crop_size"] = number(&TC::crop_size);
        k["alpha"] = number(&TC::alpha);
        k["beta"] = number(&TC::beta);
        k["seed"] = number(&TC::seed);
        k["pseudo_threshold"] = number(&TC::pseudo_threshold);
        k["ema_momentum"] = number(&TC::ema_momentum);
        k["checkpoint_every"] = number(&TC::checkpoint_every);

        auto model_int = [](int model::ModelConfig::*f) {
            return Key{[f](CliConfig& c, const std::string& v, const fs::path&) { c.train.model.*f = parse_number<int>(v, ""); },
                       [f](const CliConfig& c) { return std::to_string(c.train.model.*f); }};
        };
        k["base_channels"] = model_int(&model::ModelConfig::base_channels);
        k["depth"] = model_int(&model::ModelConfig::depth);
        k["input_channels"] = model_int(&model::ModelConfig::input_channels);
        k["scse"] = {[](CliConfig& c, const std::string& v, const fs::path&) { c.train.model.scse_enabled = parse_bool(v, "scse"); },
                     [](const CliConfig& c) { return std::string(c.train.model.scse_enabled ? "true" : "false"); }};

        auto loss_num = [](double losses::LossConfig::*f) {
            return Key{[f](CliConfig& c, const std::string& v, const fs::path&) { c.train.loss.*f = parse_number<double>(v, ""); },
                       [f](const CliConfig& c) { return fmt(c.train.loss.*f); }};
        };
        auto loss_flag = [](bool losses::LossConfig::*f) {
            return Key{[f](CliConfig& c, const std::string& v, const fs::path&) { c.train.loss.*f = parse_bool(v, ""); },
                       [f](const CliConfig& c) { return std::string(c.train.loss.*f ? "true" : "false"); }};
        };
        k["lambda_ic"] = loss_num(&losses::LossConfig::lambda_ic);
        k["epsilon"] = loss_num(&losses::LossConfig::epsilon);
        k["pseudo_weight"] = loss_num(&losses::LossConfig::pseudo_weight);
        k["weight_dc"] = loss_num(&losses::LossConfig::weight_dc);
        k["weight_ac"] = loss_num(&losses::LossConfig::weight_ac);
        k["enable_dc"] = loss_flag(&losses::LossConfig::enable_dc);
        k["enable_ac"] = loss_flag(&losses::LossConfig::enable_ac);
        k["enable_pc"] = loss_flag(&losses::LossConfig::enable_pc);
        return k;
    }();
    return table;
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& [name, key] : keys()) out.push_back(name);
    return out;
}

CliConfig parse_config(const std::string& text, const fs::path& base_dir) {
    CliConfig c;
    std::istringstream in(text);
    std::string line;
    std::set<std::string> seen;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto it = keys().find(key);
        if (it == keys().end()) throw ConfigError(where + "unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
        if (value.empty()) throw ConfigError(where + "key '" + key + "' has no value");
        try {
            it->second.set(c, value, base_dir);
        } catch (const ConfigError& e) {
            std::string msg = e.what();
            if (msg.starts_with("'': ")) msg = "'" + key + "': " + msg.substr(4);
            throw ConfigError(where + msg);
        }
    }
    c.train.validate();
    return c;
}

CliConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), path.parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string format_config(const CliConfig& c) {
    std::string out;
    for (const auto& [name, key] : keys()) {
        const std::string v = key.get(c);
        if (!v.empty()) out += name + " = " + v + "\n";
    }
    return out;
}

}  // namespace scribble::cli
