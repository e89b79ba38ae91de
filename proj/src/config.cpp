#include "cfd/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "cfd/io.hpp"

namespace cfd {

namespace {

// Single field list shared by parse and serialize so the two cannot drift.
template <typename Visitor>
void visit_fields(ExperimentConfig& c, Visitor&& v) {
    v("seed", c.seed);
    v("out_dir", c.out_dir);
    v("data_dir", c.data_dir);
    v("seeds", c.seeds);
    v("workers", c.workers);
    v("image_h", c.image_h);
    v("image_w", c.image_w);
    v("n_scenes", c.n_scenes);
    v("n_eval", c.n_eval);
    v("disp_min", c.disp_min);
    v("disp_max", c.disp_max);
    v("layers_min", c.layers_min);
    v("layers_max", c.layers_max);
    v("focal_px", c.focal_px);
    v("baseline_m", c.baseline_m);
    v("beta_min", c.beta_min);
    v("beta_max", c.beta_max);
    v("airlight_min", c.airlight_min);
    v("airlight_max", c.airlight_max);
    v("channels", c.channels);
    v("iters", c.iters);
    v("max_disp", c.max_disp);
    v("radius", c.radius);
    v("hidden", c.hidden);
    v("head_mid", c.head_mid);
    v("lambda1", c.lambda1);
    v("lambda2", c.lambda2);
    v("gamma", c.gamma);
    v("margin", c.margin);
    v("lr", c.lr);
    v("steps", c.steps);
    v("adam_beta1", c.adam_beta1);
    v("adam_beta2", c.adam_beta2);
    v("adam_eps", c.adam_eps);
    v("log_every", c.log_every);
    v("use_dist", c.use_dist);
    v("use_cont", c.use_cont);
    v("train_domains", c.train_domains);
    v("teacher_ckpt", c.teacher_ckpt);
    v("checkpoint", c.checkpoint);
    v("eval_model", c.eval_model);
}

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

void assign_value(const std::string& key, const std::string& value, std::string& field) {
    (void)key;
    field = value;
}

void assign_value(const std::string& key, const std::string& value, bool& field) {
    if (value == "true" || value == "1") field = true;
    else if (value == "false" || value == "0") field = false;
    else throw ConfigError("config: bad boolean for '" + key + "': " + value);
}

void assign_value(const std::string& key, const std::string& value, int& field) {
    try {
        size_t pos = 0;
        field = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for '" + key + "': " + value);
    }
}

void assign_value(const std::string& key, const std::string& value, uint64_t& field) {
    try {
        size_t pos = 0;
        field = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for '" + key + "': " + value);
    }
}

void assign_value(const std::string& key, const std::string& value, double& field) {
    char* end = nullptr;
    field = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError("config: bad number for '" + key + "': " + value);
}

std::string format_value(const std::string& v) { return v; }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(uint64_t v) { return std::to_string(v); }
std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    bool found = false;
    visit_fields(cfg, [&](const char* name, auto& field) {
        if (!found && key == name) {
            assign_value(key, value, field);
            found = true;
        }
    });
    if (!found) throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        set_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    if (!path_exists(path)) throw ConfigError("config: no such file: " + path);
    return parse_config(read_text_file(path));
}

void apply_override(ExperimentConfig& cfg, const std::string& key_value) {
    const size_t eq = key_value.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + key_value + "'");
    set_key(cfg, trim(key_value.substr(0, eq)), trim(key_value.substr(eq + 1)));
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    visit_fields(const_cast<ExperimentConfig&>(cfg), [&](const char* name, auto& field) {
        out += name;
        out += "=";
        out += format_value(field);
        out += "\n";
    });
    return out;
}

std::string render_manifest(const ExperimentConfig& cfg, const std::vector<std::string>& inputs) {
    std::string out = "# run manifest: replay with --config <this file>\n";
    out += serialize_config(cfg);
    for (const auto& p : inputs) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(file_checksum(p)));
        out += "# input ";
        out += p;
        out += " fnv1a64=";
        out += buf;
        out += "\n";
    }
    return out;
}

void ExperimentConfig::validate() const {
    if (image_h < 8 || image_w < 8 || image_h % 4 != 0 || image_w % 4 != 0)
        throw ConfigError("config: image dims must be multiples of 4 and at least 8");
    if (n_scenes < 2 || n_eval < 1 || n_eval >= n_scenes)
        throw ConfigError("config: need n_scenes > n_eval >= 1");
    if (disp_min < 1 || disp_max < disp_min)
        throw ConfigError("config: bad disparity range");
    if (disp_max >= image_w / 4)
        throw ConfigError("config: disp_max " + std::to_string(disp_max) +
                          " exceeds image_w/4 = " + std::to_string(image_w / 4));
    if (layers_min < 1 || layers_max < layers_min)
        throw ConfigError("config: bad layer count range");
    if (!(focal_px > 0.0) || !(baseline_m > 0.0))
        throw ConfigError("config: focal_px and baseline_m must be positive");
    if (beta_min < 0.0 || beta_max < beta_min)
        throw ConfigError("config: bad beta range");
    if (airlight_min < 0.0 || airlight_max > 1.0 || airlight_max < airlight_min)
        throw ConfigError("config: airlight range must sit inside [0,1]");
    if (channels < 2 || channels % 2 != 0)
        throw ConfigError("config: channels must be even and >= 2");
    if (iters < 1) throw ConfigError("config: iters must be >= 1");
    if (max_disp < 1 || radius < 0 || hidden < 1 || head_mid < 1)
        throw ConfigError("config: bad model dimensions");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("config: lambdas must be >= 0");
    if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("config: gamma must be in (0,1]");
    if (!(margin > 0.0)) throw ConfigError("config: margin must be > 0");
    if (!(lr > 0.0) || steps < 1) throw ConfigError("config: bad optimizer settings");
    if (train_domains != "clean" && train_domains != "fog" && train_domains != "mix")
        throw ConfigError("config: train_domains must be clean, fog or mix");
    if ((use_dist || use_cont) && train_domains != "mix")
        throw ConfigError("config: distillation/contrastive losses require train_domains=mix");
    if (eval_model != "student" && eval_model != "teacher")
        throw ConfigError("config: eval_model must be student or teacher");
    seed_list();
}

std::vector<uint64_t> ExperimentConfig::seed_list() const {
    std::vector<uint64_t> out;
    std::string cur;
    for (char ch : seeds + ",") {
        if (ch == ',') {
            const std::string t = trim(cur);
            cur.clear();
            if (t.empty()) continue;
            try {
                out.push_back(std::stoull(t));
            } catch (const std::exception&) {
                throw ConfigError("config: bad seed list entry '" + t + "'");
            }
        } else {
            cur += ch;
        }
    }
    if (out.empty()) throw ConfigError("config: empty seed list");
    return out;
}

}  // namespace cfd
