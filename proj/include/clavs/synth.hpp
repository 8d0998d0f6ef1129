#pragma once

// Procedural audio-visual clips and the four protocol schedule builders.
// Classes map to shape/color archetypes; the sounding objects of a clip are
// rasterized over a textured background, masks mark exactly their pixels, and
// audio is the sum of frozen per-class prototype vectors plus Gaussian noise.
// Everything is a pure function of (seed, parameters).

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clavs/rng.hpp"
#include "clavs/tensor.hpp"

namespace clavs {

enum class Protocol { TIL, CIL, DIL, TFCL };

inline std::string protocol_name(Protocol p) {
    switch (p) {
        case Protocol::TIL: return "til";
        case Protocol::CIL: return "cil";
        case Protocol::DIL: return "dil";
        case Protocol::TFCL: return "tfcl";
    }
    return "?";
}

inline Protocol protocol_from_name(const std::string& s) {
    if (s == "til") return Protocol::TIL;
    if (s == "cil") return Protocol::CIL;
    if (s == "dil") return Protocol::DIL;
    if (s == "tfcl") return Protocol::TFCL;
    throw ConfigError("unknown protocol '" + s + "' (expected til|cil|dil|tfcl)");
}

// distribution knobs a DIL schedule shifts between tasks
struct DistParams {
    double palette_rotation = 0.0;
    std::uint64_t texture_seed = 1;
    double audio_noise = 0.05;
};

namespace detail {

// balanced instance counter backing the exemplar-freedom inspection hook
struct LiveCounter {
    LiveCounter() { ++count(); }
    LiveCounter(const LiveCounter&) { ++count(); }
    LiveCounter(LiveCounter&&) noexcept { ++count(); }
    LiveCounter& operator=(const LiveCounter&) = default;
    LiveCounter& operator=(LiveCounter&&) = default;
    ~LiveCounter() { --count(); }
    static std::atomic<long>& count() {
        static std::atomic<long> c{0};
        return c;
    }
};

}  // namespace detail

// Geometry of one rendered object, recorded per frame so tests can recount
// mask pixels independently. Debug metadata; not part of the dataset dump.
struct ObjectTrace {
    std::size_t cls = 0;
    int shape = 0;
    bool sounding = false;
    double size = 0.0;
    std::vector<double> cx, cy;  // per frame
};

struct Sample {
    std::size_t frames_t = 0, h = 0, w = 0, d_raw = 0;
    std::vector<double> frames;            // T*H*W*3, values in [0,1]
    std::vector<double> audio;             // T*d_raw
    std::vector<std::uint8_t> masks;       // T*H*W
    std::vector<std::uint8_t> supervised;  // T
    std::optional<std::size_t> class_label;
    std::size_t source_count = 1;
    std::vector<ObjectTrace> objects;

    static long live() { return detail::LiveCounter::count().load(); }

    std::size_t mask_pixels(std::size_t t) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < h * w; ++i) n += masks[t * h * w + i] ? 1 : 0;
        return n;
    }

private:
    detail::LiveCounter live_;
};

// ---------------------------------------------------------------------------
// class archetypes

constexpr int kShapeKinds = 7;

// membership of pixel (x, y) in a shape centered at (cx, cy) with extent s
inline bool shape_contains(int kind, double x, double y, double cx, double cy, double s) {
    const double dx = x - cx, dy = y - cy;
    switch (kind % kShapeKinds) {
        case 0: return dx * dx + dy * dy <= s * s;                          // disc
        case 1: return std::abs(dx) <= 0.9 * s && std::abs(dy) <= 0.9 * s;  // square
        case 2:                                                             // triangle
            return dy >= -s && dy <= s && std::abs(dx) <= 0.5 * (dy + s);
        case 3: {                                                           // ring
            double r2 = dx * dx + dy * dy;
            return r2 >= 0.25 * s * s && r2 <= s * s;
        }
        case 4:                                                             // cross
            return (std::abs(dx) <= 0.35 * s && std::abs(dy) <= s) ||
                   (std::abs(dy) <= 0.35 * s && std::abs(dx) <= s);
        case 5: return std::abs(dx) + std::abs(dy) <= s;                    // diamond
        default: return std::abs(dy) <= 0.45 * s && std::abs(dx) <= s;      // bar
    }
}

inline std::array<double, 3> class_color(std::size_t cls, double palette_rotation) {
    // golden-angle hue spacing, shifted by the palette rotation
    double hue = std::fmod(0.11 + 0.618033988749895 * double(cls) + palette_rotation, 1.0);
    if (hue < 0.0) hue += 1.0;
    const double s = 0.85, v = 0.95;
    const double c = v * s;
    const double hp = hue * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

// frozen per-class audio prototypes; independent of run seeds
inline const std::vector<double>& audio_prototype(std::size_t cls, std::size_t d_raw) {
    static std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> cache;
    auto key = std::make_pair(cls, d_raw);
    auto it = cache.find(key);
    if (it == cache.end()) {
        Rng rng(mix_seed(0xC1A55u, "audio-prototype", cls, d_raw));
        std::vector<double> p(d_raw);
        for (auto& v : p) v = rng.gaussian();
        it = cache.emplace(key, std::move(p)).first;
    }
    return it->second;
}

// ---------------------------------------------------------------------------
// sample generation

struct SampleSpec {
    std::vector<std::size_t> sounding;  // class ids of sound-producing objects
    DistParams dist;
    std::size_t frames_t = 3, h = 16, w = 16, d_raw = 16;
    std::size_t total_classes = 7;  // pool for silent distractors
    bool first_frame_only_supervision = true;
    bool with_label = true;  // single-source semantic annotation
    std::uint64_t seed = 0;
};

inline Sample generate_sample(const SampleSpec& spec) {
    if (spec.sounding.empty()) throw ConfigError("generate_sample: no sounding classes");
    Rng rng(spec.seed);
    Sample s;
    s.frames_t = spec.frames_t;
    s.h = spec.h;
    s.w = spec.w;
    s.d_raw = spec.d_raw;
    s.source_count = spec.sounding.size();
    if (spec.with_label && spec.sounding.size() == 1) s.class_label = spec.sounding[0];
    s.frames.assign(spec.frames_t * spec.h * spec.w * 3, 0.0);
    s.audio.assign(spec.frames_t * spec.d_raw, 0.0);
    s.masks.assign(spec.frames_t * spec.h * spec.w, 0);
    s.supervised.assign(spec.frames_t, 1);
    if (spec.first_frame_only_supervision)
        for (std::size_t t = 1; t < spec.frames_t; ++t) s.supervised[t] = 0;

    // background texture family drawn from the distribution's texture seed
    Rng tex(mix_seed(spec.dist.texture_seed, "texture-family"));
    const double fx = tex.uniform(0.3, 1.3), fy = tex.uniform(0.3, 1.3);
    const double px = tex.uniform(0.0, 6.28), py = tex.uniform(0.0, 6.28);
    std::array<double, 3> tint{tex.uniform(0.18, 0.32), tex.uniform(0.18, 0.32),
                               tex.uniform(0.18, 0.32)};

    // objects: silent distractors first so sounding objects draw over them
    struct Obj {
        std::size_t cls;
        int shape;
        bool sounding;
        double size, cx, cy, vx, vy;
    };
    std::vector<Obj> objs;
    const std::size_t n_distract = rng.below(2);  // 0 or 1
    for (std::size_t d = 0; d < n_distract; ++d) {
        if (spec.total_classes <= spec.sounding.size()) break;
        std::size_t cls;
        do {
            cls = rng.below(spec.total_classes);
        } while (std::find(spec.sounding.begin(), spec.sounding.end(), cls) !=
                 spec.sounding.end());
        objs.push_back({cls, int(cls % kShapeKinds), false, 0, 0, 0, 0, 0});
    }
    for (std::size_t cls : spec.sounding)
        objs.push_back({cls, int(cls % kShapeKinds), true, 0, 0, 0, 0, 0});

    const double min_size = 2.2, max_size = 3.4;
    for (auto& o : objs) {
        o.size = rng.uniform(min_size, max_size);
        o.cx = rng.uniform(o.size + 1.0, double(spec.w) - o.size - 2.0);
        o.cy = rng.uniform(o.size + 1.0, double(spec.h) - o.size - 2.0);
        o.vx = rng.uniform(-1.0, 1.0);
        o.vy = rng.uniform(-1.0, 1.0);
    }

    s.objects.reserve(objs.size());
    for (const auto& o : objs)
        s.objects.push_back({o.cls, o.shape, o.sounding, o.size, {}, {}});

    for (std::size_t t = 0; t < spec.frames_t; ++t) {
        double* frame = s.frames.data() + t * spec.h * spec.w * 3;
        std::uint8_t* mask = s.masks.data() + t * spec.h * spec.w;
        for (std::size_t y = 0; y < spec.h; ++y)
            for (std::size_t x = 0; x < spec.w; ++x) {
                const double wave =
                    0.12 * std::sin(fx * double(x) + px) * std::sin(fy * double(y) + py);
                const double grain = rng.uniform(-0.02, 0.02);
                for (std::size_t c = 0; c < 3; ++c)
                    frame[(y * spec.w + x) * 3 + c] =
                        std::clamp(tint[c] + wave + grain, 0.0, 1.0);
            }
        for (std::size_t oi = 0; oi < objs.size(); ++oi) {
            auto& o = objs[oi];
            auto color = class_color(o.cls, spec.dist.palette_rotation);
            for (std::size_t y = 0; y < spec.h; ++y)
                for (std::size_t x = 0; x < spec.w; ++x) {
                    if (!shape_contains(o.shape, double(x), double(y), o.cx, o.cy, o.size))
                        continue;
                    const double shade = rng.uniform(-0.03, 0.03);
                    for (std::size_t c = 0; c < 3; ++c)
                        frame[(y * spec.w + x) * 3 + c] =
                            std::clamp(color[c] + shade, 0.0, 1.0);
                    mask[y * spec.w + x] = o.sounding ? 1 : 0;
                }
            s.objects[oi].cx.push_back(o.cx);
            s.objects[oi].cy.push_back(o.cy);
            // drift, bouncing off the margins
            o.cx += o.vx;
            o.cy += o.vy;
            const double lo_x = o.size + 1.0, hi_x = double(spec.w) - o.size - 2.0;
            const double lo_y = o.size + 1.0, hi_y = double(spec.h) - o.size - 2.0;
            if (o.cx < lo_x || o.cx > hi_x) { o.vx = -o.vx; o.cx = std::clamp(o.cx, lo_x, hi_x); }
            if (o.cy < lo_y || o.cy > hi_y) { o.vy = -o.vy; o.cy = std::clamp(o.cy, lo_y, hi_y); }
        }

        std::size_t area = s.mask_pixels(t);
        if (area == 0 || area >= spec.h * spec.w)
            throw ContractError("generate_sample: degenerate mask in frame " +
                                std::to_string(t));

        double* av = s.audio.data() + t * spec.d_raw;
        for (std::size_t cls : spec.sounding) {
            const auto& proto = audio_prototype(cls, spec.d_raw);
            for (std::size_t i = 0; i < spec.d_raw; ++i) av[i] += proto[i];
        }
        for (std::size_t i = 0; i < spec.d_raw; ++i)
            av[i] += spec.dist.audio_noise * rng.gaussian();
    }
    return s;
}

// ---------------------------------------------------------------------------
// schedules

struct TaskSpec {
    std::size_t id = 0;
    std::vector<std::size_t> classes;
    std::size_t train_count = 24, test_count = 8;
    DistParams dist;
    std::uint64_t seed = 0;
};

struct DataConfig {
    std::size_t classes = 7;  // TIL/CIL class pool; TFCL source-group pool
    std::size_t split_base = 3, split_increment = 2;
    std::size_t frames_t = 3, h = 16, w = 16, d_raw = 16;
    std::size_t train_per_task = 24, test_per_task = 8;
    double audio_noise = 0.05;
    std::size_t dil_tasks = 3;
    double tfcl_rho = 0.25;  // blurry-boundary mixing fraction
};

struct ProtocolSchedule {
    Protocol protocol = Protocol::CIL;
    bool semantic = false;          // class labels carried by samples
    bool first_frame_only = true;   // SS-style supervision
    bool multi_source = false;
    double blur_rho = 0.0;
    DataConfig data;
    std::vector<TaskSpec> tasks;
};

inline std::vector<std::size_t> split_sizes(std::size_t classes, std::size_t base,
                                            std::size_t increment) {
    if (base == 0 || base > classes)
        throw ConfigError("split: base " + std::to_string(base) + " incompatible with " +
                          std::to_string(classes) + " classes");
    if (classes > base && (increment == 0 || (classes - base) % increment != 0))
        throw ConfigError("split: (" + std::to_string(classes) + " - " + std::to_string(base) +
                          ") is not a multiple of increment " + std::to_string(increment));
    std::vector<std::size_t> sizes{base};
    for (std::size_t left = classes - base; left > 0; left -= increment)
        sizes.push_back(increment);
    return sizes;
}

inline ProtocolSchedule build_schedule(Protocol protocol, const DataConfig& cfg,
                                       std::uint64_t seed) {
    ProtocolSchedule sched;
    sched.protocol = protocol;
    sched.data = cfg;

    auto task_seed = [&](std::size_t k) { return mix_seed(seed, "task-stream", k); };

    switch (protocol) {
        case Protocol::TIL:
        case Protocol::CIL: {
            sched.semantic = true;
            sched.first_frame_only = true;
            auto sizes = split_sizes(cfg.classes, cfg.split_base, cfg.split_increment);
            std::vector<std::size_t> order(cfg.classes);
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng perm(mix_seed(seed, "class-order"));
            perm.shuffle(order);
            std::size_t cursor = 0;
            for (std::size_t k = 0; k < sizes.size(); ++k) {
                TaskSpec t;
                t.id = k;
                t.classes.assign(order.begin() + cursor, order.begin() + cursor + sizes[k]);
                cursor += sizes[k];
                t.train_count = cfg.train_per_task;
                t.test_count = cfg.test_per_task;
                t.dist.audio_noise = cfg.audio_noise;
                t.seed = task_seed(k);
                sched.tasks.push_back(std::move(t));
            }
            break;
        }
        case Protocol::DIL: {
            sched.semantic = false;  // one fixed category; masks carry the signal
            sched.first_frame_only = true;
            Rng pick(mix_seed(seed, "dil-class"));
            const std::size_t cls = pick.below(cfg.classes);
            for (std::size_t k = 0; k < cfg.dil_tasks; ++k) {
                TaskSpec t;
                t.id = k;
                t.classes = {cls};
                t.train_count = cfg.train_per_task;
                t.test_count = cfg.test_per_task;
                // every consecutive pair differs in palette, texture and noise
                t.dist.palette_rotation = 0.17 * double(k);
                t.dist.texture_seed = mix_seed(seed, "dil-texture", k);
                t.dist.audio_noise = cfg.audio_noise * (1.0 + 0.5 * double(k));
                t.seed = task_seed(k);
                sched.tasks.push_back(std::move(t));
            }
            break;
        }
        case Protocol::TFCL: {
            sched.semantic = false;
            sched.first_frame_only = false;  // MS-style dense supervision
            sched.multi_source = true;
            sched.blur_rho = cfg.tfcl_rho;
            auto sizes = split_sizes(cfg.classes, cfg.split_base, cfg.split_increment);
            std::size_t cursor = 0;
            for (std::size_t k = 0; k < sizes.size(); ++k) {
                TaskSpec t;
                t.id = k;
                for (std::size_t i = 0; i < sizes[k]; ++i) t.classes.push_back(cursor + i);
                cursor += sizes[k];
                t.train_count = cfg.train_per_task;
                t.test_count = cfg.test_per_task;
                t.dist.audio_noise = cfg.audio_noise;
                t.seed = task_seed(k);
                sched.tasks.push_back(std::move(t));
            }
            break;
        }
    }
    return sched;
}

namespace detail {

inline Sample schedule_sample(const ProtocolSchedule& sched, std::size_t task_idx,
                              bool train, std::size_t index) {
    const TaskSpec* task = &sched.tasks.at(task_idx);
    std::uint64_t stream_seed = mix_seed(task->seed, train ? "train" : "test", index);
    Rng pick(mix_seed(stream_seed, "composition"));

    // blurry boundary: a fraction of the training stream comes from a
    // neighboring task's distribution
    if (train && sched.blur_rho > 0.0 && sched.tasks.size() > 1) {
        if (pick.uniform() < sched.blur_rho) {
            bool prev = pick.uniform() < 0.5;
            std::size_t nb = task_idx;
            if (prev && task_idx > 0) nb = task_idx - 1;
            else if (!prev && task_idx + 1 < sched.tasks.size()) nb = task_idx + 1;
            else if (task_idx > 0) nb = task_idx - 1;
            else nb = task_idx + 1;
            task = &sched.tasks.at(nb);
        }
    }

    SampleSpec spec;
    spec.dist = task->dist;
    spec.frames_t = sched.data.frames_t;
    spec.h = sched.data.h;
    spec.w = sched.data.w;
    spec.d_raw = sched.data.d_raw;
    spec.total_classes = sched.data.classes;
    spec.first_frame_only_supervision = sched.first_frame_only;
    spec.with_label = sched.semantic;
    spec.seed = mix_seed(stream_seed, "render");

    if (sched.multi_source) {
        std::size_t want = 2 + pick.below(2);  // 2 or 3 sources
        std::vector<std::size_t> pool = task->classes;
        pick.shuffle(pool);
        if (want > pool.size()) want = pool.size();
        if (want == 0) throw ConfigError("schedule task has no classes");
        spec.sounding.assign(pool.begin(), pool.begin() + want);
    } else {
        // round-robin keeps per-task class exposure balanced
        spec.sounding = {task->classes[index % task->classes.size()]};
    }
    return generate_sample(spec);
}

}  // namespace detail

inline std::vector<Sample> make_train_samples(const ProtocolSchedule& sched,
                                              std::size_t task_idx) {
    std::vector<Sample> out;
    out.reserve(sched.tasks.at(task_idx).train_count);
    for (std::size_t i = 0; i < sched.tasks.at(task_idx).train_count; ++i)
        out.push_back(detail::schedule_sample(sched, task_idx, true, i));
    return out;
}

inline std::vector<Sample> make_test_samples(const ProtocolSchedule& sched,
                                             std::size_t task_idx) {
    std::vector<Sample> out;
    out.reserve(sched.tasks.at(task_idx).test_count);
    for (std::size_t i = 0; i < sched.tasks.at(task_idx).test_count; ++i)
        out.push_back(detail::schedule_sample(sched, task_idx, false, i));
    return out;
}

}  // namespace clavs

// ---------------------------------------------------------------------------
// dataset dump: one binary archive of all task samples plus a JSON manifest
// listing the task composition. Loading is bitwise faithful for every tensor
// (object traces are generation metadata and are not archived).

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "clavs/checkpoint.hpp"

namespace clavs {

struct ScheduleDump {
    std::vector<std::vector<Sample>> train, test;  // indexed by task
};

namespace detail {

constexpr char kDataMagic[8] = {'C', 'L', 'A', 'V', 'S', 'D', 'S', '1'};

inline void write_sample(std::ostream& os, const Sample& s) {
    using ckpt::detail::write_pod;
    write_pod<std::uint8_t>(os, s.class_label.has_value() ? 1 : 0);
    write_pod<std::uint64_t>(os, s.class_label.value_or(0));
    write_pod<std::uint64_t>(os, s.source_count);
    os.write(reinterpret_cast<const char*>(s.supervised.data()),
             static_cast<std::streamsize>(s.supervised.size()));
    os.write(reinterpret_cast<const char*>(s.frames.data()),
             static_cast<std::streamsize>(s.frames.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(s.audio.data()),
             static_cast<std::streamsize>(s.audio.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(s.masks.data()),
             static_cast<std::streamsize>(s.masks.size()));
}

inline Sample read_sample(std::istream& is, std::size_t t, std::size_t h, std::size_t w,
                          std::size_t d_raw) {
    using ckpt::detail::read_pod;
    Sample s;
    s.frames_t = t;
    s.h = h;
    s.w = w;
    s.d_raw = d_raw;
    const bool has_label = read_pod<std::uint8_t>(is) != 0;
    const auto label = read_pod<std::uint64_t>(is);
    if (has_label) s.class_label = label;
    s.source_count = read_pod<std::uint64_t>(is);
    s.supervised.resize(t);
    is.read(reinterpret_cast<char*>(s.supervised.data()), static_cast<std::streamsize>(t));
    s.frames.resize(t * h * w * 3);
    is.read(reinterpret_cast<char*>(s.frames.data()),
            static_cast<std::streamsize>(s.frames.size() * sizeof(double)));
    s.audio.resize(t * d_raw);
    is.read(reinterpret_cast<char*>(s.audio.data()),
            static_cast<std::streamsize>(s.audio.size() * sizeof(double)));
    s.masks.resize(t * h * w);
    is.read(reinterpret_cast<char*>(s.masks.data()),
            static_cast<std::streamsize>(s.masks.size()));
    if (!is) throw IoError("dataset: truncated sample record");
    return s;
}

}  // namespace detail

inline nlohmann::json schedule_manifest(const ProtocolSchedule& sched) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : sched.tasks) {
        tasks.push_back({{"id", t.id},
                         {"classes", t.classes},
                         {"train_count", t.train_count},
                         {"test_count", t.test_count},
                         {"palette_rotation", t.dist.palette_rotation},
                         {"texture_seed", t.dist.texture_seed},
                         {"audio_noise", t.dist.audio_noise},
                         {"seed", t.seed}});
    }
    return {{"protocol", protocol_name(sched.protocol)},
            {"semantic", sched.semantic},
            {"first_frame_only", sched.first_frame_only},
            {"multi_source", sched.multi_source},
            {"blur_rho", sched.blur_rho},
            {"frames_t", sched.data.frames_t},
            {"h", sched.data.h},
            {"w", sched.data.w},
            {"d_raw", sched.data.d_raw},
            {"classes", sched.data.classes},
            {"tasks", tasks}};
}

inline void dump_schedule(const ProtocolSchedule& sched, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    {
        std::ofstream mf(fs::path(dir) / "manifest.json");
        if (!mf) throw IoError("dataset: cannot write manifest in " + dir);
        mf << schedule_manifest(sched).dump(2) << '\n';
    }
    std::ofstream os(fs::path(dir) / "schedule.bin", std::ios::binary);
    if (!os) throw IoError("dataset: cannot write schedule.bin in " + dir);
    using ckpt::detail::write_pod;
    os.write(detail::kDataMagic, sizeof(detail::kDataMagic));
    write_pod<std::uint32_t>(os, 1);
    write_pod<std::uint64_t>(os, ckpt::kOrderMarker);
    write_pod<std::uint64_t>(os, sched.data.frames_t);
    write_pod<std::uint64_t>(os, sched.data.h);
    write_pod<std::uint64_t>(os, sched.data.w);
    write_pod<std::uint64_t>(os, sched.data.d_raw);
    write_pod<std::uint64_t>(os, sched.tasks.size());
    for (std::size_t k = 0; k < sched.tasks.size(); ++k) {
        auto train = make_train_samples(sched, k);
        auto test = make_test_samples(sched, k);
        write_pod<std::uint64_t>(os, train.size());
        write_pod<std::uint64_t>(os, test.size());
        for (const auto& s : train) detail::write_sample(os, s);
        for (const auto& s : test) detail::write_sample(os, s);
    }
    if (!os) throw IoError("dataset: write to " + dir + "/schedule.bin failed");
}

inline ScheduleDump load_schedule_dump(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "schedule.bin", std::ios::binary);
    if (!is) throw IoError("dataset: cannot open " + dir + "/schedule.bin");
    using ckpt::detail::read_pod;
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, detail::kDataMagic, sizeof(magic)) != 0)
        throw IoError("dataset: " + dir + "/schedule.bin is not a clavs dataset");
    if (read_pod<std::uint32_t>(is) != 1) throw IoError("dataset: unsupported version");
    if (read_pod<std::uint64_t>(is) != ckpt::kOrderMarker)
        throw IoError("dataset: byte-order marker mismatch");
    const auto t = read_pod<std::uint64_t>(is);
    const auto h = read_pod<std::uint64_t>(is);
    const auto w = read_pod<std::uint64_t>(is);
    const auto d_raw = read_pod<std::uint64_t>(is);
    const auto n_tasks = read_pod<std::uint64_t>(is);
    ScheduleDump dump;
    dump.train.resize(n_tasks);
    dump.test.resize(n_tasks);
    for (std::uint64_t k = 0; k < n_tasks; ++k) {
        const auto n_train = read_pod<std::uint64_t>(is);
        const auto n_test = read_pod<std::uint64_t>(is);
        for (std::uint64_t i = 0; i < n_train; ++i)
            dump.train[k].push_back(detail::read_sample(is, t, h, w, d_raw));
        for (std::uint64_t i = 0; i < n_test; ++i)
            dump.test[k].push_back(detail::read_sample(is, t, h, w, d_raw));
    }
    return dump;
}

}  // namespace clavs
