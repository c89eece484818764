#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qstar/tensor.hpp"

namespace qstar {

// feature dimensions shared by the generator and the model
struct DataDims {
    int64_t t = 8;        // segments
    int64_t d = 32;       // feature width
    int64_t m_prime = 4;  // patches per segment
    int64_t n = 6;        // question tokens
    int64_t f = 8;        // frequency bands
    int64_t vocab = 8;    // answer vocabulary size

    void validate() const;
};

// instrument classes; the last two form the frequency-critical pair: they
// share visual and audio codebooks and differ only in frequency band
constexpr int kNumClasses = 6;
constexpr int kCriticalClassA = 4;
constexpr int kCriticalClassB = 5;

// answer vocabulary indices
constexpr int64_t kAnswerZero = 0;
constexpr int64_t kAnswerOne = 1;
constexpr int64_t kAnswerTwo = 2;
constexpr int64_t kAnswerThree = 3;
constexpr int64_t kAnswerYes = 4;
constexpr int64_t kAnswerNo = 5;
constexpr int64_t kAnswerLeft = 6;
constexpr int64_t kAnswerRight = 7;

const std::vector<std::string>& answer_vocabulary();

// every class sounds in one canonical band
int band_of_class(int class_id, int64_t num_bands);

enum class QuestionTemplate : uint8_t {
    CountSounding,
    CountTypes,
    Existential,
    LouderThan,
    FirstSoundingSide,
    AlwaysPlaying,
};
constexpr int kNumTemplates = 6;

enum class ModalityTag : uint8_t { Audio = 0, Visual = 1, AudioVisual = 2 };

std::string modality_tag_name(ModalityTag tag);

struct Instrument {
    int class_id = 0;
    int position = 0;  // patch index
    int band = 0;
    std::vector<bool> schedule;  // activity per segment
    double loudness = 0.2;

    bool sounding() const;
    int first_active() const;  // -1 when silent
};

struct SceneSpec {
    std::vector<Instrument> instruments;
    int64_t patch_extent = 0;  // M' of the generating config; midline for left/right
};

struct QuestionSpec {
    QuestionTemplate template_id = QuestionTemplate::CountSounding;
    int arg_a = -1;  // class reference, when the template takes one
    int arg_b = -1;
    ModalityTag modality = ModalityTag::Audio;
    bool frequency_critical = false;
};

struct FeatureBundle {
    Tensor f_v;         // [T, D]
    Tensor f_p;         // [T, M', D]
    Tensor f_a;         // [T, D]
    Tensor f_ast;       // [T, F, D]
    Tensor f_w;         // [N, D]
    Tensor f_sentence;  // [D]
    int64_t label = 0;
    ModalityTag question_type = ModalityTag::Audio;
    bool frequency_critical = false;
};

// fixed random codebooks, drawn once per run seed
struct Codebooks {
    // row-major [rows, D]
    std::vector<double> visual;  // kNumClasses + 1 rows (last = background)
    std::vector<double> audio;   // kNumClasses rows
    std::vector<double> band;    // F rows (energy codes)
    std::vector<double> pos;     // M' rows, added per patch so attention can
                                 // recover where an instrument sits
    // kNumTemplates + kNumClasses + 3 rows: templates, classes, pad, then
    // subject/object role markers (added to the argument tokens so that
    // two-argument questions stay order-identifiable without positional
    // encodings)
    std::vector<double> word;
    int64_t d = 0;
    int64_t f = 0;

    static Codebooks init(uint64_t run_seed, const DataDims& dims);
    const double* visual_row(int i) const { return visual.data() + i * d; }
    const double* audio_row(int i) const { return audio.data() + i * d; }
    const double* band_row(int i) const { return band.data() + i * d; }
    const double* pos_row(int i) const { return pos.data() + i * d; }
    const double* word_row(int i) const { return word.data() + i * d; }
};

constexpr double kFeatureNoiseSigma = 0.05;

// unconstrained scene: 1..min(4, M') instruments, distinct positions and
// classes, contiguous activity runs
SceneSpec generate_scene(uint64_t seed, const DataDims& dims);

struct Sample {
    SceneSpec scene;
    QuestionSpec question;
};

// scene + question pair with template-conditioned constraints so that
// per-template answer distributions stay balanced
Sample generate_sample(uint64_t seed, const DataDims& dims);

// forces every sample onto the frequency-critical existential instances
Sample generate_critical_sample(uint64_t seed, const DataDims& dims);

int64_t answer_oracle(const SceneSpec& scene, const QuestionSpec& question);

FeatureBundle synthesize_features(const SceneSpec& scene, const QuestionSpec& question,
                                  uint64_t noise_seed, const DataDims& dims,
                                  const Codebooks& books);

// full per-sample path: sample_seed = mix_seed(run_seed, index)
std::vector<FeatureBundle> make_dataset(uint64_t run_seed, int64_t count, const DataDims& dims,
                                        const Codebooks& books, bool critical_only = false);

// fixture file format: magic "QSTF", version u16 LE, six named tensors
// (name length u8, name bytes, rank u8, extents u32 LE, payload f64 LE
// row-major), then label u32 LE and question_type u8
void write_fixture(const FeatureBundle& bundle, const std::string& path);
FeatureBundle read_fixture(const std::string& path);

}  // namespace qstar
