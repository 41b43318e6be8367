#pragma once

#include "enviro/common.hpp"
#include "enviro/kv.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace enviro::params {

// Named parameter tensors with gradient and optimizer-moment storage.
// Insertion order is the canonical (deterministic) iteration order.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Mat value;
        Mat grad;
        Mat m;  // first moment
        Mat v;  // second moment
    };

    // Registers a tensor; grad/m/v start at zero. Duplicate names are an error.
    Mat& add(const std::string& name, Mat init);

    bool has(const std::string& name) const;
    const Mat& value(const std::string& name) const;
    Mat& value(const std::string& name);
    Mat& grad(const std::string& name);

    void zero_grads();
    std::size_t scalar_count() const;

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    const Entry& find(const std::string& name) const;
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-4;  // peak rate, reached after warmup
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t warmup_steps = 0;  // linear ramp, then constant
};

class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // Learning rate applied at 1-based step `step`.
    double lr_for(std::int64_t step) const;

    // One update from the gradients currently held in `store`.
    void step(ParamStore& store);

    std::int64_t steps_done() const { return steps_done_; }
    void set_steps_done(std::int64_t n) { steps_done_ = n; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::int64_t steps_done_ = 0;
};

// Checkpoints carry a key-value config section plus named float32 arrays, so
// a file is loadable without out-of-band knowledge of the model that wrote
// it. Values are stored little-endian, column-major.
struct Checkpoint {
    KvConfig config;
    std::vector<std::string> order;
    std::map<std::string, Mat> arrays;
};

// with_opt_state additionally writes <name>.adam_m / <name>.adam_v and the
// step count under config key optimizer.steps_done.
void save_checkpoint(const std::string& path, const KvConfig& config, const ParamStore& store,
                     const Adam* opt_state = nullptr);

Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint arrays into an already-built store (shapes must match).
// When `opt` is given, Adam moments and step count are restored too; a
// checkpoint without optimizer state leaves `opt` untouched.
void restore_params(ParamStore& store, const Checkpoint& ckpt, Adam* opt = nullptr);

}  // namespace enviro::params
