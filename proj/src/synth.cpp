#include "qstar/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace qstar {

void DataDims::validate() const {
    if (t < 1 || d < 1 || m_prime < 1 || n < 3 || f < 1) {
        throw ConfigError("invalid feature dimensions: T, D, M', F must be >= 1 and N >= 3");
    }
    if (vocab < static_cast<int64_t>(answer_vocabulary().size())) {
        throw ConfigError("answer vocabulary size must be >= " +
                          std::to_string(answer_vocabulary().size()));
    }
}

const std::vector<std::string>& answer_vocabulary() {
    static const std::vector<std::string> vocab = {"zero", "one",  "two", "three",
                                                   "yes",  "no",   "left", "right"};
    return vocab;
}

int band_of_class(int class_id, int64_t num_bands) {
    return static_cast<int>(class_id % num_bands);
}

std::string modality_tag_name(ModalityTag tag) {
    switch (tag) {
        case ModalityTag::Audio: return "audio";
        case ModalityTag::Visual: return "visual";
        case ModalityTag::AudioVisual: return "audio-visual";
    }
    return "?";
}

bool Instrument::sounding() const {
    for (bool b : schedule) {
        if (b) return true;
    }
    return false;
}

int Instrument::first_active() const {
    for (size_t i = 0; i < schedule.size(); ++i) {
        if (schedule[i]) return static_cast<int>(i);
    }
    return -1;
}

Codebooks Codebooks::init(uint64_t run_seed, const DataDims& dims) {
    Codebooks b;
    b.d = dims.d;
    b.f = dims.f;
    Rng rng(mix_seed(run_seed, 0xc0debul));
    auto draw = [&](int64_t rows) {
        std::vector<double> v(rows * dims.d);
        for (auto& x : v) x = rng.gaussian();
        return v;
    };
    b.visual = draw(kNumClasses + 1);
    b.audio = draw(kNumClasses);
    b.band = draw(dims.f);
    b.pos = draw(dims.m_prime);
    b.word = draw(kNumTemplates + kNumClasses + 3);
    // frequency-critical pair: identical visual and audio codes, so only
    // the band energies in F_ast can tell the two classes apart
    std::copy(b.visual.begin() + kCriticalClassA * dims.d,
              b.visual.begin() + (kCriticalClassA + 1) * dims.d,
              b.visual.begin() + kCriticalClassB * dims.d);
    std::copy(b.audio.begin() + kCriticalClassA * dims.d,
              b.audio.begin() + (kCriticalClassA + 1) * dims.d,
              b.audio.begin() + kCriticalClassB * dims.d);
    return b;
}

namespace {

std::vector<int> sample_distinct(Rng& rng, int count, int range) {
    std::vector<int> pool(range);
    for (int i = 0; i < range; ++i) pool[i] = i;
    for (int i = 0; i < count; ++i) {
        int j = i + static_cast<int>(rng.next_below(range - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

std::vector<bool> contiguous_schedule(Rng& rng, int64_t t, int min_len = 1, int max_len = -1) {
    if (max_len < 0) max_len = static_cast<int>(t);
    int len = min_len + static_cast<int>(rng.next_below(max_len - min_len + 1));
    int start = static_cast<int>(rng.next_below(t - len + 1));
    std::vector<bool> s(t, false);
    for (int i = start; i < start + len; ++i) s[i] = true;
    return s;
}

Instrument make_instrument(Rng& rng, int class_id, int position, const DataDims& dims,
                           bool sounding) {
    Instrument ins;
    ins.class_id = class_id;
    ins.position = position;
    ins.band = band_of_class(class_id, dims.f);
    ins.loudness = rng.uniform(0.2, 1.0);
    ins.schedule = sounding ? contiguous_schedule(rng, dims.t)
                            : std::vector<bool>(dims.t, false);
    return ins;
}

}  // namespace

SceneSpec generate_scene(uint64_t seed, const DataDims& dims) {
    dims.validate();
    Rng rng(mix_seed(seed, 0x5ce9e));
    int max_count = static_cast<int>(std::min<int64_t>(4, dims.m_prime));
    int count = 1 + static_cast<int>(rng.next_below(max_count));
    auto positions = sample_distinct(rng, count, static_cast<int>(dims.m_prime));
    auto classes = sample_distinct(rng, count, kNumClasses);
    SceneSpec scene;
    scene.patch_extent = dims.m_prime;
    for (int i = 0; i < count; ++i) {
        bool sounding = rng.next_double() < 0.75;
        scene.instruments.push_back(
            make_instrument(rng, classes[i], positions[i], dims, sounding));
    }
    return scene;
}

int64_t answer_oracle(const SceneSpec& scene, const QuestionSpec& q) {
    auto find_class = [&](int class_id) -> const Instrument* {
        for (const auto& ins : scene.instruments) {
            if (ins.class_id == class_id) return &ins;
        }
        return nullptr;
    };
    auto check_class_arg = [&](int arg) {
        if (arg < 0 || arg >= kNumClasses) {
            throw ConfigError("question references class " + std::to_string(arg) +
                              " outside the class range");
        }
    };
    switch (q.template_id) {
        case QuestionTemplate::CountSounding: {
            int64_t count = 0;
            for (const auto& ins : scene.instruments) count += ins.sounding() ? 1 : 0;
            if (count > 3) {
                throw ConfigError("sounding count " + std::to_string(count) +
                                  " exceeds the answer vocabulary's count words");
            }
            return count;  // zero..three occupy indices 0..3
        }
        case QuestionTemplate::CountTypes: {
            std::vector<int> seen;
            for (const auto& ins : scene.instruments) {
                if (std::find(seen.begin(), seen.end(), ins.class_id) == seen.end()) {
                    seen.push_back(ins.class_id);
                }
            }
            if (seen.size() > 3) {
                throw ConfigError("type count exceeds the answer vocabulary's count words");
            }
            return static_cast<int64_t>(seen.size());
        }
        case QuestionTemplate::Existential: {
            check_class_arg(q.arg_a);
            const Instrument* ins = find_class(q.arg_a);
            return (ins && ins->sounding()) ? kAnswerYes : kAnswerNo;
        }
        case QuestionTemplate::LouderThan: {
            check_class_arg(q.arg_a);
            check_class_arg(q.arg_b);
            const Instrument* a = find_class(q.arg_a);
            const Instrument* b = find_class(q.arg_b);
            if (!a || !b) {
                throw ConfigError("louder_than references a class absent from the scene");
            }
            return a->loudness > b->loudness ? kAnswerYes : kAnswerNo;  // tie -> no
        }
        case QuestionTemplate::FirstSoundingSide: {
            const Instrument* earliest = nullptr;
            for (const auto& ins : scene.instruments) {
                int fa = ins.first_active();
                if (fa < 0) continue;
                if (!earliest || fa < earliest->first_active()) earliest = &ins;
                // ties keep the earlier list entry
            }
            if (!earliest) {
                throw ConfigError("first_sounding_side asked about a silent scene");
            }
            // patch midline: lower half is "left"
            return earliest->position * 2 < scene.patch_extent ? kAnswerLeft : kAnswerRight;
        }
        case QuestionTemplate::AlwaysPlaying: {
            check_class_arg(q.arg_a);
            const Instrument* ins = find_class(q.arg_a);
            if (!ins) throw ConfigError("always_playing references a class absent from the scene");
            for (bool b : ins->schedule) {
                if (!b) return kAnswerNo;
            }
            return kAnswerYes;
        }
    }
    throw ConfigError("unknown question template");
}

// ---- balanced sample generation ----

namespace {

// non-critical templates draw classes from the four that are not part of
// the frequency-critical pair, so that only flagged samples need F_ast
constexpr int kPlainClasses = 4;

SceneSpec scene_with(Rng& rng, const DataDims& dims, const std::vector<int>& classes,
                     const std::vector<bool>& sounding) {
    auto positions = sample_distinct(rng, static_cast<int>(classes.size()),
                                     static_cast<int>(dims.m_prime));
    SceneSpec scene;
    scene.patch_extent = dims.m_prime;
    for (size_t i = 0; i < classes.size(); ++i) {
        scene.instruments.push_back(
            make_instrument(rng, classes[i], positions[i], dims, sounding[i]));
    }
    return scene;
}

Sample make_count_sounding(Rng& rng, const DataDims& dims) {
    int max_count = static_cast<int>(std::min<int64_t>(3, dims.m_prime));
    int target = static_cast<int>(rng.next_below(max_count + 1));
    int count = std::max(1, target + static_cast<int>(rng.next_below(max_count - target + 1)));
    auto classes = sample_distinct(rng, count, kPlainClasses);
    std::vector<bool> sounding(count, false);
    for (int i = 0; i < target; ++i) sounding[i] = true;
    Sample s;
    s.scene = scene_with(rng, dims, classes, sounding);
    // counting needs the active set to be stationary: full-length schedules
    // and unit loudness keep the per-segment mixture proportional to the
    // count (the oracle is unaffected)
    for (auto& ins : s.scene.instruments) {
        ins.loudness = 1.0;
        if (ins.sounding()) ins.schedule.assign(dims.t, true);
    }
    s.question = {QuestionTemplate::CountSounding, -1, -1, ModalityTag::Audio, false};
    return s;
}

Sample make_count_types(Rng& rng, const DataDims& dims) {
    int max_count = static_cast<int>(std::min<int64_t>(3, dims.m_prime));
    int count = 1 + static_cast<int>(rng.next_below(max_count));
    auto classes = sample_distinct(rng, count, kPlainClasses);
    std::vector<bool> sounding(count);
    for (int i = 0; i < count; ++i) sounding[i] = rng.next_double() < 0.5;
    Sample s;
    s.scene = scene_with(rng, dims, classes, sounding);
    s.question = {QuestionTemplate::CountTypes, -1, -1, ModalityTag::Visual, false};
    return s;
}

Sample make_existential_plain(Rng& rng, const DataDims& dims) {
    int max_count = static_cast<int>(std::min<int64_t>(3, dims.m_prime));
    int count = 1 + static_cast<int>(rng.next_below(max_count));
    auto classes = sample_distinct(rng, count, kPlainClasses);
    bool target_yes = rng.next_double() < 0.5;
    std::vector<bool> sounding(count);
    for (int i = 0; i < count; ++i) sounding[i] = rng.next_double() < 0.5;
    int asked;
    if (target_yes) {
        asked = classes[rng.next_below(count)];
        for (size_t i = 0; i < classes.size(); ++i) {
            if (classes[i] == asked) sounding[i] = true;
        }
    } else if (rng.next_double() < 0.5 || count == kPlainClasses) {
        // asked class present but silent
        size_t pick = rng.next_below(count);
        asked = classes[pick];
        sounding[pick] = false;
    } else {
        // asked class absent
        std::vector<int> absent;
        for (int c = 0; c < kPlainClasses; ++c) {
            if (std::find(classes.begin(), classes.end(), c) == classes.end()) absent.push_back(c);
        }
        asked = absent[rng.next_below(absent.size())];
    }
    Sample s;
    s.scene = scene_with(rng, dims, classes, sounding);
    // presence should not hinge on how short a random schedule happened to
    // be: whatever sounds, sounds throughout
    for (auto& ins : s.scene.instruments) {
        if (ins.sounding()) ins.schedule.assign(dims.t, true);
    }
    s.question = {QuestionTemplate::Existential, asked, -1, ModalityTag::AudioVisual, false};
    return s;
}

Sample make_existential_critical(Rng& rng, const DataDims& dims) {
    int member = rng.next_double() < 0.5 ? kCriticalClassA : kCriticalClassB;
    int asked = rng.next_double() < 0.5 ? kCriticalClassA : kCriticalClassB;
    std::vector<int> classes = {member};
    std::vector<bool> sounding = {true};
    if (dims.m_prime >= 2 && rng.next_double() < 0.5) {
        classes.push_back(static_cast<int>(rng.next_below(kPlainClasses)));
        sounding.push_back(rng.next_double() < 0.5);
    }
    Sample s;
    s.scene = scene_with(rng, dims, classes, sounding);
    for (auto& ins : s.scene.instruments) {
        if (ins.sounding()) ins.schedule.assign(dims.t, true);
    }
    s.question = {QuestionTemplate::Existential, asked, -1, ModalityTag::AudioVisual, true};
    return s;
}

Sample make_louder_than(Rng& rng, const DataDims& dims) {
    int max_count = static_cast<int>(std::min<int64_t>(3, dims.m_prime));
    int count = std::min(max_count, 2 + static_cast<int>(rng.next_below(2)));
    if (count < 2) throw ConfigError("louder_than requires M' >= 2");
    auto classes = sample_distinct(rng, count, kPlainClasses);
    std::vector<bool> sounding(count, true);
    Sample s;
    s.scene = scene_with(rng, dims, classes, sounding);
    // the referenced pair plays throughout with a clear loudness margin,
    // so the comparison is identifiable from the segment mixtures
    auto& a = s.scene.instruments[0];
    auto& b = s.scene.instruments[1];
    a.schedule.assign(dims.t, true);
    b.schedule.assign(dims.t, true);
    while (std::fabs(a.loudness - b.loudness) < 0.3) {
        b.loudness = rng.uniform(0.2, 1.0);
    }
    s.question = {QuestionTemplate::LouderThan, a.class_id, b.class_id, ModalityTag::Audio, false};
    return s;
}

Sample make_first_sounding_side(Rng& rng, const DataDims& dims) {
    int max_count = static_cast<int>(std::min<int64_t>(3, dims.m_prime));
    int count = 1 + static_cast<int>(rng.next_below(max_count));
    auto classes = sample_distinct(rng, count, kPlainClasses);
    std::vector<bool> sounding(count, true);
    Sample s;
    s.scene = scene_with(rng, dims, classes, sounding);
    // the earliest instrument opens the clip and plays alone through the
    // first half; later onsets are distinct and everything plays to the end
    int t = static_cast<int>(dims.t);
    int half = t / 2;
    std::vector<int> starts(count);
    starts[0] = static_cast<int>(rng.next_below(std::max(half / 2, 1)));
    if (count > 1) {
        auto late = sample_distinct(rng, count - 1, t - half);
        std::sort(late.begin(), late.end());
        for (int i = 1; i < count; ++i) starts[i] = half + late[i - 1];
    }
    for (int i = 0; i < count; ++i) {
        auto& ins = s.scene.instruments[i];
        std::fill(ins.schedule.begin(), ins.schedule.end(), false);
        for (int j = starts[i]; j < t; ++j) ins.schedule[j] = true;
    }
    s.question = {QuestionTemplate::FirstSoundingSide, -1, -1, ModalityTag::AudioVisual, false};
    return s;
}

Sample make_always_playing(Rng& rng, const DataDims& dims) {
    int max_count = static_cast<int>(std::min<int64_t>(3, dims.m_prime));
    int count = 1 + static_cast<int>(rng.next_below(max_count));
    auto classes = sample_distinct(rng, count, kPlainClasses);
    std::vector<bool> sounding(count, true);
    Sample s;
    s.scene = scene_with(rng, dims, classes, sounding);
    size_t pick = rng.next_below(count);
    auto& asked = s.scene.instruments[pick];
    if (rng.next_double() < 0.5) {
        std::fill(asked.schedule.begin(), asked.schedule.end(), true);
    } else {
        // contiguous run strictly shorter than T
        int len = 1 + static_cast<int>(rng.next_below(dims.t - 1));
        int start = static_cast<int>(rng.next_below(dims.t - len + 1));
        std::fill(asked.schedule.begin(), asked.schedule.end(), false);
        for (int j = start; j < start + len; ++j) asked.schedule[j] = true;
    }
    s.question = {QuestionTemplate::AlwaysPlaying, asked.class_id, -1, ModalityTag::AudioVisual,
                  false};
    return s;
}

}  // namespace

Sample generate_sample(uint64_t seed, const DataDims& dims) {
    dims.validate();
    Rng rng(mix_seed(seed, 0x5a3137e));
    switch (rng.next_below(kNumTemplates)) {
        case 0: return make_count_sounding(rng, dims);
        case 1: return make_count_types(rng, dims);
        case 2:
            return rng.next_double() < 0.5 ? make_existential_critical(rng, dims)
                                           : make_existential_plain(rng, dims);
        case 3: return make_louder_than(rng, dims);
        case 4: return make_first_sounding_side(rng, dims);
        default: return make_always_playing(rng, dims);
    }
}

Sample generate_critical_sample(uint64_t seed, const DataDims& dims) {
    dims.validate();
    Rng rng(mix_seed(seed, 0xc9171ca1));
    return make_existential_critical(rng, dims);
}

// ---- feature synthesis ----

FeatureBundle synthesize_features(const SceneSpec& scene, const QuestionSpec& question,
                                  uint64_t noise_seed, const DataDims& dims,
                                  const Codebooks& books) {
    dims.validate();
    if (books.d != dims.d || books.f != dims.f) {
        throw ConfigError("codebooks were built for different dimensions");
    }
    Rng noise(mix_seed(noise_seed, 0xfea7));
    const double sigma = kFeatureNoiseSigma;
    int64_t t = dims.t, d = dims.d, m = dims.m_prime, f = dims.f, n = dims.n;

    // patch occupancy: class at each patch, -1 for background
    std::vector<int> occupant(m, -1);
    for (const auto& ins : scene.instruments) occupant[ins.position] = ins.class_id;

    std::vector<double> fp(t * m * d), fv(t * d, 0.0);
    for (int64_t ti = 0; ti < t; ++ti) {
        for (int64_t mi = 0; mi < m; ++mi) {
            const double* code =
                occupant[mi] >= 0 ? books.visual_row(occupant[mi]) : books.visual_row(kNumClasses);
            const double* where = books.pos_row(static_cast<int>(mi));
            double* dst = fp.data() + (ti * m + mi) * d;
            for (int64_t di = 0; di < d; ++di) {
                dst[di] = code[di] + where[di] + sigma * noise.gaussian();
            }
        }
        double* row = fv.data() + ti * d;
        for (int64_t mi = 0; mi < m; ++mi) {
            const double* src = fp.data() + (ti * m + mi) * d;
            for (int64_t di = 0; di < d; ++di) row[di] += src[di];
        }
        for (int64_t di = 0; di < d; ++di) row[di] /= static_cast<double>(m);
    }

    std::vector<double> fa(t * d);
    for (int64_t ti = 0; ti < t; ++ti) {
        double* row = fa.data() + ti * d;
        for (int64_t di = 0; di < d; ++di) row[di] = sigma * noise.gaussian();
        for (const auto& ins : scene.instruments) {
            if (!ins.schedule[ti]) continue;
            const double* code = books.audio_row(ins.class_id);
            for (int64_t di = 0; di < d; ++di) row[di] += ins.loudness * code[di];
        }
    }

    std::vector<double> fast(t * f * d);
    for (int64_t ti = 0; ti < t; ++ti) {
        for (int64_t fi = 0; fi < f; ++fi) {
            double energy = 0.0;
            for (const auto& ins : scene.instruments) {
                if (ins.band == fi && ins.schedule[ti]) energy += ins.loudness;
            }
            const double* code = books.band_row(fi);
            double* dst = fast.data() + (ti * f + fi) * d;
            for (int64_t di = 0; di < d; ++di) {
                dst[di] = energy * code[di] + sigma * noise.gaussian();
            }
        }
    }

    // question tokens: template code, then class-argument codes, then pad
    std::vector<double> fw(n * d);
    auto put_token = [&](int64_t slot, const double* code) {
        std::copy(code, code + d, fw.data() + slot * d);
    };
    put_token(0, books.word_row(static_cast<int>(question.template_id)));
    // argument tokens carry a role marker so that "A louder than B" and
    // "B louder than A" remain distinguishable under set-wise attention
    auto put_arg = [&](int64_t slot, int class_id, int role) {
        const double* code = books.word_row(kNumTemplates + class_id);
        const double* marker = books.word_row(kNumTemplates + kNumClasses + 1 + role);
        double* dst = fw.data() + slot * d;
        for (int64_t di = 0; di < d; ++di) dst[di] = code[di] + marker[di];
    };
    int64_t slot = 1;
    if (question.arg_a >= 0) put_arg(slot++, question.arg_a, 0);
    if (question.arg_b >= 0) put_arg(slot++, question.arg_b, 1);
    for (; slot < n; ++slot) put_token(slot, books.word_row(kNumTemplates + kNumClasses));

    std::vector<double> fsent(d, 0.0);
    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t di = 0; di < d; ++di) fsent[di] += fw[ni * d + di];
    }
    for (int64_t di = 0; di < d; ++di) fsent[di] /= static_cast<double>(n);

    FeatureBundle bundle;
    bundle.f_v = Tensor::from_data({t, d}, std::move(fv));
    bundle.f_p = Tensor::from_data({t, m, d}, std::move(fp));
    bundle.f_a = Tensor::from_data({t, d}, std::move(fa));
    bundle.f_ast = Tensor::from_data({t, f, d}, std::move(fast));
    bundle.f_w = Tensor::from_data({n, d}, std::move(fw));
    bundle.f_sentence = Tensor::from_data({d}, std::move(fsent));
    bundle.label = answer_oracle(scene, question);
    bundle.question_type = question.modality;
    bundle.frequency_critical = question.frequency_critical;
    return bundle;
}

std::vector<FeatureBundle> make_dataset(uint64_t run_seed, int64_t count, const DataDims& dims,
                                        const Codebooks& books, bool critical_only) {
    std::vector<FeatureBundle> out;
    out.reserve(count);
    for (int64_t i = 0; i < count; ++i) {
        uint64_t sample_seed = mix_seed(run_seed, static_cast<uint64_t>(i));
        Sample s = critical_only ? generate_critical_sample(sample_seed, dims)
                                 : generate_sample(sample_seed, dims);
        out.push_back(synthesize_features(s.scene, s.question, sample_seed, dims, books));
    }
    return out;
}

// ---- fixture serialization ----

namespace {

constexpr char kMagic[4] = {'Q', 'S', 'T', 'F'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
    out.push_back(static_cast<char>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
        if (t.dim(i) > 0xffffffffLL) throw FormatError("fixture: extent exceeds u32 range");
        put_u32(out, static_cast<uint32_t>(t.dim(i)));
    }
    for (double v : t.data()) put_f64(out, v);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) {
        if (pos + n > buf.size()) {
            throw FormatError(std::string("fixture truncated while reading ") + what);
        }
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint8_t>(buf[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

Tensor read_tensor(Reader& r, const std::string& expected_name) {
    uint8_t name_len = r.u8("tensor name length");
    r.need(name_len, "tensor name");
    std::string name = r.buf.substr(r.pos, name_len);
    r.pos += name_len;
    if (name != expected_name) {
        throw FormatError("fixture: expected tensor '" + expected_name + "', found '" + name +
                          "'");
    }
    uint8_t rank = r.u8("tensor rank");
    Shape shape(rank);
    int64_t count = 1;
    for (int i = 0; i < rank; ++i) {
        shape[i] = r.u32("tensor extent");
        if (shape[i] < 1) throw FormatError("fixture: nonpositive extent");
        count *= shape[i];
    }
    if (r.pos + static_cast<size_t>(count) * 8 > r.buf.size()) {
        throw FormatError("fixture: declared dims of '" + expected_name +
                          "' exceed the payload length");
    }
    std::vector<double> data(count);
    for (int64_t i = 0; i < count; ++i) data[i] = r.f64("tensor payload");
    return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

void write_fixture(const FeatureBundle& bundle, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_tensor(out, "f_v", bundle.f_v);
    put_tensor(out, "f_p", bundle.f_p);
    put_tensor(out, "f_a", bundle.f_a);
    put_tensor(out, "f_ast", bundle.f_ast);
    put_tensor(out, "f_w", bundle.f_w);
    put_tensor(out, "f_sentence", bundle.f_sentence);
    put_u32(out, static_cast<uint32_t>(bundle.label));
    out.push_back(static_cast<char>(bundle.question_type));
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw FormatError("cannot open fixture file for writing: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw FormatError("failed writing fixture file: " + path);
}

FeatureBundle read_fixture(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw FormatError("cannot open fixture file: " + path);
    std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    Reader r{buf};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("fixture: bad magic bytes in " + path);
    }
    r.pos = 4;
    uint16_t version = r.u16("version");
    if (version != kVersion) {
        throw FormatError("fixture: unsupported format version " + std::to_string(version));
    }
    FeatureBundle bundle;
    bundle.f_v = read_tensor(r, "f_v");
    bundle.f_p = read_tensor(r, "f_p");
    bundle.f_a = read_tensor(r, "f_a");
    bundle.f_ast = read_tensor(r, "f_ast");
    bundle.f_w = read_tensor(r, "f_w");
    bundle.f_sentence = read_tensor(r, "f_sentence");
    bundle.label = r.u32("label");
    uint8_t tag = r.u8("question type");
    if (tag > 2) throw FormatError("fixture: invalid question type tag");
    bundle.question_type = static_cast<ModalityTag>(tag);
    if (r.pos != buf.size()) {
        throw FormatError("fixture: trailing bytes after the payload in " + path);
    }
    return bundle;
}

}  // namespace qstar
