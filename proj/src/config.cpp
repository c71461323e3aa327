#include "pembed/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pembed {

std::string mode_name(RunMode m) {
    switch (m) {
        case RunMode::scratch: return "scratch";
        case RunMode::transfer: return "transfer";
        case RunMode::baseline: return "prompt-tuning-baseline";
        case RunMode::vanilla_eval: return "vanilla-eval";
    }
    return "?";
}

RunMode mode_from_name(const std::string& s) {
    if (s == "scratch") return RunMode::scratch;
    if (s == "transfer") return RunMode::transfer;
    if (s == "prompt-tuning-baseline") return RunMode::baseline;
    if (s == "vanilla-eval") return RunMode::vanilla_eval;
    throw config_error("unknown mode '" + s + "'");
}

void RunConfig::validate() const {
    if (vocab < 2) throw config_error("config: vocab must be >= 2 (EOS plus content)");
    if (d_p < 1 || d_e < 1 || d_e_prime < 1 || layers < 1 || ffn < 1) {
        throw config_error("config: model dims must be >= 1");
    }
    if (max_len < 1) throw config_error("config: max_len must be >= 1");
    if (k < 0) throw config_error("config: k must be >= 0");
    if (gen_temperature <= 0.0) throw config_error("config: gen_temperature must be positive");
    if (tau <= 0.0) throw config_error("config: tau must be positive");
    if (lr <= 0.0) throw config_error("config: lr must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
        throw config_error("config: warmup_ratio must lie in [0, 1)");
    }
    if (lr_schedule != "constant" && lr_schedule != "cosine") {
        throw config_error("config: lr_schedule must be 'constant' or 'cosine'");
    }
    if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
    if (accum_steps < 1) throw config_error("config: accum_steps must be >= 1");
    if (total_steps < 0) throw config_error("config: total_steps must be >= 0");
    if (lora_r < 1) throw config_error("config: lora_r must be >= 1");
    if (virtual_tokens < 0) throw config_error("config: virtual_tokens must be >= 0");
    if (eval_every < 1) throw config_error("config: eval_every must be >= 1");
    if (eval_c < 2) throw config_error("config: eval_c must be >= 2");
    if (target_accuracy < 0.0 || target_accuracy > 1.0) {
        throw config_error("config: target_accuracy must lie in [0, 1]");
    }
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw config_error("config: bad boolean '" + v + "' for " + key);
}

long parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: bad integer '" + v + "' for " + key);
    }
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: bad number '" + v + "' for " + key);
    }
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "mode") cfg.mode = mode_from_name(value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "vocab") cfg.vocab = static_cast<int>(parse_int(value, key));
    else if (key == "d_p") cfg.d_p = static_cast<int>(parse_int(value, key));
    else if (key == "d_e") cfg.d_e = static_cast<int>(parse_int(value, key));
    else if (key == "d_e_prime") cfg.d_e_prime = static_cast<int>(parse_int(value, key));
    else if (key == "layers") cfg.layers = static_cast<int>(parse_int(value, key));
    else if (key == "ffn") cfg.ffn = static_cast<int>(parse_int(value, key));
    else if (key == "max_len") cfg.max_len = static_cast<int>(parse_int(value, key));
    else if (key == "k") cfg.k = static_cast<int>(parse_int(value, key));
    else if (key == "gen_temperature") cfg.gen_temperature = parse_double(value, key);
    else if (key == "pos_on_soft_tokens") cfg.pos_on_soft_tokens = parse_bool(value, key);
    else if (key == "tau") cfg.tau = parse_double(value, key);
    else if (key == "symmetric_docs") cfg.symmetric_docs = parse_bool(value, key);
    else if (key == "lr") cfg.lr = parse_double(value, key);
    else if (key == "warmup_ratio") cfg.warmup_ratio = parse_double(value, key);
    else if (key == "lr_schedule") cfg.lr_schedule = value;
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(value, key));
    else if (key == "accum_steps") cfg.accum_steps = static_cast<int>(parse_int(value, key));
    else if (key == "total_steps") cfg.total_steps = static_cast<int>(parse_int(value, key));
    else if (key == "lora_r") cfg.lora_r = static_cast<int>(parse_int(value, key));
    else if (key == "lora_alpha") cfg.lora_alpha = parse_double(value, key);
    else if (key == "virtual_tokens") cfg.virtual_tokens = static_cast<int>(parse_int(value, key));
    else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_int(value, key));
    else if (key == "eval_c") cfg.eval_c = static_cast<int>(parse_int(value, key));
    else if (key == "target_accuracy") cfg.target_accuracy = parse_double(value, key);
    else if (key == "use_prime_backbone") cfg.use_prime_backbone = parse_bool(value, key);
    else if (key == "log_wall_time") cfg.log_wall_time = parse_bool(value, key);
    else throw config_error("config: unknown key '" + key + "'");
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open '" + path + "'");
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw config_error("config: " + path + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
        }
        apply_config_line(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return cfg;
}

std::string structural_signature(const RunConfig& cfg) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "v=%d;dp=%d;de=%d;dep=%d;L=%d;h=%d;ml=%d;k=%d;r=%d;a=%g;vt=%d;pos=%d;gt=%g;sym=%d;upb=%d",
                  cfg.vocab, cfg.d_p, cfg.d_e, cfg.d_e_prime, cfg.layers, cfg.ffn, cfg.max_len,
                  cfg.k, cfg.lora_r, cfg.lora_alpha, cfg.virtual_tokens,
                  cfg.pos_on_soft_tokens ? 1 : 0, cfg.gen_temperature, cfg.symmetric_docs ? 1 : 0,
                  cfg.use_prime_backbone ? 1 : 0);
    return buf;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string sig = structural_signature(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a 64
    for (unsigned char c : sig) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace pembed
