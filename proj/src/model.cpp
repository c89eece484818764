#include "qstar/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace qstar {

void RunConfig::validate() const {
    // model-side constraints only; the stricter data-generation bounds
    // (DataDims::validate) are enforced where samples are drawn
    if (t < 1 || d < 1 || m_prime < 1 || n < 1 || f < 1) {
        throw ConfigError("dims t, d, m_prime, n, f must all be >= 1");
    }
    if (vocab < 2) throw ConfigError("vocab must be >= 2");
    if (heads < 1 || d % heads != 0) {
        throw ConfigError("heads must divide d (got heads=" + std::to_string(heads) +
                          ", d=" + std::to_string(d) + ")");
    }
    if (decay_factor <= 0.0 || decay_factor > 1.0) {
        throw ConfigError("decay_factor must lie in (0, 1]");
    }
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (decay_period < 1 || batch_size < 1 || epochs < 1 || train_samples < 1 ||
        val_samples < 1) {
        throw ConfigError("decay_period, batch_size, epochs and dataset sizes must be >= 1");
    }
    if (hidden < 0) throw ConfigError("hidden must be >= 0 (0 selects D)");
    if (!disable_qcr) {
        // the two external-resource prompt modes are registered but
        // unimplemented; surface that as a config error up front
        if (prompt_mode == PromptMode::DeclarativeTranslation ||
            prompt_mode == PromptMode::Caption) {
            throw UnimplementedError("prompt mode '" + prompt_mode_name(prompt_mode) +
                                     "' is a named ablation slot without an implementation");
        }
    }
}

DataDims RunConfig::data_dims() const {
    DataDims dims;
    dims.t = t;
    dims.d = d;
    dims.m_prime = m_prime;
    dims.n = n;
    dims.f = f;
    dims.vocab = vocab;
    return dims;
}

bool RunConfig::qgmc_enabled() const {
    return !disable_qgmc && !query_guidance_removed.count(GuidanceStage::Beginning);
}

bool RunConfig::tfi_question_term() const {
    return !query_guidance_removed.count(GuidanceStage::Middle);
}

PromptMode RunConfig::effective_prompt_mode() const {
    if (disable_qcr) return PromptMode::None;
    if (query_guidance_removed.count(GuidanceStage::Final)) return PromptMode::None;
    return prompt_mode;
}

// ---- config parsing ----

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        size_t end = 0;
        int64_t v = std::stoll(value, &end);
        if (end != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t end = 0;
        double v = std::stod(value, &end);
        if (end != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

GuidanceStage parse_stage(const std::string& value) {
    if (value == "beginning") return GuidanceStage::Beginning;
    if (value == "middle") return GuidanceStage::Middle;
    if (value == "final") return GuidanceStage::Final;
    throw ConfigError("query_guidance_removed: unknown stage '" + value + "'");
}

std::string stage_name(GuidanceStage s) {
    switch (s) {
        case GuidanceStage::Beginning: return "beginning";
        case GuidanceStage::Middle: return "middle";
        case GuidanceStage::Final: return "final";
    }
    return "?";
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line is not key=value: '" + s + "'");
        }
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key == "t") c.t = parse_int(key, value);
        else if (key == "d") c.d = parse_int(key, value);
        else if (key == "m_prime") c.m_prime = parse_int(key, value);
        else if (key == "n") c.n = parse_int(key, value);
        else if (key == "f") c.f = parse_int(key, value);
        else if (key == "heads") c.heads = parse_int(key, value);
        else if (key == "hidden") c.hidden = parse_int(key, value);
        else if (key == "vocab") c.vocab = parse_int(key, value);
        else if (key == "learning_rate") c.learning_rate = parse_double(key, value);
        else if (key == "decay_factor") c.decay_factor = parse_double(key, value);
        else if (key == "decay_period") c.decay_period = parse_int(key, value);
        else if (key == "batch_size") c.batch_size = parse_int(key, value);
        else if (key == "epochs") c.epochs = parse_int(key, value);
        else if (key == "disable_qgmc") c.disable_qgmc = parse_bool(key, value);
        else if (key == "disable_sti") c.disable_sti = parse_bool(key, value);
        else if (key == "disable_tfi") c.disable_tfi = parse_bool(key, value);
        else if (key == "disable_qcr") c.disable_qcr = parse_bool(key, value);
        else if (key == "qgmc_variant") c.qgmc_variant = qgmc_variant_from_name(value);
        else if (key == "prompt_mode") c.prompt_mode = prompt_mode_from_name(value);
        else if (key == "query_guidance_removed") {
            c.query_guidance_removed.clear();
            std::istringstream parts(value);
            std::string part;
            while (std::getline(parts, part, ',')) {
                part = trim(part);
                if (!part.empty()) c.query_guidance_removed.insert(parse_stage(part));
            }
        }
        else if (key == "seed") c.seed = static_cast<uint64_t>(parse_int(key, value));
        else if (key == "train_samples") c.train_samples = parse_int(key, value);
        else if (key == "val_samples") c.val_samples = parse_int(key, value);
        else if (key == "output_path") c.output_path = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

std::string config_to_text(const RunConfig& c) {
    std::ostringstream out;
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    out << "t=" << c.t << "\nd=" << c.d << "\nm_prime=" << c.m_prime << "\nn=" << c.n
        << "\nf=" << c.f << "\nheads=" << c.heads << "\nhidden=" << c.hidden
        << "\nvocab=" << c.vocab << "\nlearning_rate=" << num(c.learning_rate)
        << "\ndecay_factor=" << num(c.decay_factor) << "\ndecay_period=" << c.decay_period
        << "\nbatch_size=" << c.batch_size << "\nepochs=" << c.epochs
        << "\ndisable_qgmc=" << (c.disable_qgmc ? "true" : "false")
        << "\ndisable_sti=" << (c.disable_sti ? "true" : "false")
        << "\ndisable_tfi=" << (c.disable_tfi ? "true" : "false")
        << "\ndisable_qcr=" << (c.disable_qcr ? "true" : "false")
        << "\nqgmc_variant=" << qgmc_variant_name(c.qgmc_variant)
        << "\nprompt_mode=" << prompt_mode_name(c.prompt_mode) << "\nquery_guidance_removed=";
    bool first = true;
    for (auto s : c.query_guidance_removed) {
        if (!first) out << ",";
        out << stage_name(s);
        first = false;
    }
    out << "\nseed=" << c.seed << "\ntrain_samples=" << c.train_samples
        << "\nval_samples=" << c.val_samples << "\noutput_path=" << c.output_path << "\n";
    return out.str();
}

// ---- model ----

std::vector<Tensor> ModelParams::all() const {
    std::vector<Tensor> out;
    if (qgmc) qgmc->collect(out);
    if (sti) sti->collect(out);
    if (tfi) tfi->collect(out);
    qcr.collect(out);
    bank.collect(out);
    return out;
}

int64_t ModelParams::parameter_count() const {
    int64_t n = 0;
    for (const auto& t : all()) n += t.size();
    return n;
}

std::vector<BatchNormState*> ModelParams::batchnorm_states() const {
    std::vector<BatchNormState*> out;
    if (tfi) {
        out.push_back(tfi->conv.bn1_state.get());
        out.push_back(tfi->conv.bn2_state.get());
    }
    return out;
}

ModelParams build_model(const RunConfig& config) {
    config.validate();
    Rng rng(mix_seed(config.seed, 0x90de1));
    ModelParams m;
    if (config.qgmc_enabled()) m.qgmc = QgmcParams::init(config.d, config.heads, rng);
    if (!config.disable_sti) m.sti = StiParams::init(config.d, config.heads, rng);
    if (!config.disable_tfi) m.tfi = TfiParams::init(config.d, config.hidden_width(), rng);
    if (config.disable_qcr) {
        m.qcr = QcrParams::init_fusion_only(config.d, config.vocab, rng);
        m.bank = PromptBank::none();
    } else {
        m.qcr = QcrParams::init(config.d, config.heads, config.vocab, rng);
        m.bank = make_prompt_bank(config.effective_prompt_mode(), config.d, rng);
    }
    return m;
}

AnswerDistribution model_forward(const ModelParams& params, const RunConfig& config,
                                 const FeatureBundle& bundle, const RunContext& ctx,
                                 ForwardStats* stats) {
    uint64_t ops_before = op_counter();

    Tensor f_vq = bundle.f_v;
    Tensor f_aq = bundle.f_a;
    if (params.qgmc) {
        QgmcOutput out = qgmc_variant_forward(bundle.f_v, bundle.f_a, bundle.f_w, *params.qgmc,
                                              config.qgmc_variant);
        f_vq = out.f_vq;
        f_aq = out.f_aq;
    }
    Tensor f_vi = f_vq;
    if (params.sti) f_vi = sti_forward(bundle.f_p, f_aq, f_vq, *params.sti);
    Tensor f_ai = f_aq;
    if (params.tfi) {
        if (stats) ++stats->f_ast_reads;
        f_ai = tfi_forward(bundle.f_ast, f_aq, bundle.f_w, *params.tfi, ctx,
                           config.tfi_question_term());
    }
    AnswerDistribution dist =
        params.qcr.has_attention()
            ? qcr_forward(f_vi, f_ai, bundle.f_sentence, params.bank, params.qcr)
            : fusion_head(f_vi, f_ai, bundle.f_sentence, params.qcr);
    if (stats) stats->ops += op_counter() - ops_before;
    return dist;
}

// ---- checkpointing ----

namespace {

constexpr char kParamsMagic[4] = {'Q', 'S', 'T', 'P'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& buf, size_t& pos) {
    if (pos + 4 > buf.size()) throw FormatError("checkpoint truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

double get_f64(const std::string& buf, size_t& pos) {
    if (pos + 8 > buf.size()) throw FormatError("checkpoint truncated");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_params(const ModelParams& params, const std::string& path) {
    std::string out;
    out.append(kParamsMagic, 4);
    auto tensors = params.all();
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(out, static_cast<uint32_t>(t.size()));
        for (double v : t.data()) put_f64(out, v);
    }
    auto states = params.batchnorm_states();
    put_u32(out, static_cast<uint32_t>(states.size()));
    for (const auto* s : states) {
        put_u32(out, static_cast<uint32_t>(s->running_mean.size()));
        for (double v : s->running_mean) put_f64(out, v);
        for (double v : s->running_var) put_f64(out, v);
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw FormatError("cannot open checkpoint for writing: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw FormatError("failed writing checkpoint: " + path);
}

void load_params(ModelParams& params, const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw FormatError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 || std::memcmp(buf.data(), kParamsMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic bytes in " + path);
    }
    size_t pos = 4;
    auto tensors = params.all();
    uint32_t count = get_u32(buf, pos);
    if (count != tensors.size()) {
        throw FormatError("checkpoint tensor count does not match this configuration");
    }
    for (auto& t : tensors) {
        uint32_t n = get_u32(buf, pos);
        if (n != static_cast<uint32_t>(t.size())) {
            throw FormatError("checkpoint tensor size does not match this configuration");
        }
        auto& d = t.mutable_data();
        for (uint32_t i = 0; i < n; ++i) d[i] = get_f64(buf, pos);
    }
    auto states = params.batchnorm_states();
    uint32_t scount = get_u32(buf, pos);
    if (scount != states.size()) {
        throw FormatError("checkpoint batchnorm state count does not match this configuration");
    }
    for (auto* s : states) {
        uint32_t n = get_u32(buf, pos);
        if (n != s->running_mean.size()) {
            throw FormatError("checkpoint batchnorm width does not match this configuration");
        }
        for (uint32_t i = 0; i < n; ++i) s->running_mean[i] = get_f64(buf, pos);
        for (uint32_t i = 0; i < n; ++i) s->running_var[i] = get_f64(buf, pos);
    }
}

}  // namespace qstar
