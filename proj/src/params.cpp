#include "enviro/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace enviro::params {

Mat& ParamStore::add(const std::string& name, Mat init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
    Entry e;
    e.name = name;
    e.value = std::move(init);
    e.grad = Mat::Zero(e.value.rows(), e.value.cols());
    e.m = Mat::Zero(e.value.rows(), e.value.cols());
    e.v = Mat::Zero(e.value.rows(), e.value.cols());
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().value;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

const ParamStore::Entry& ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second];
}

const Mat& ParamStore::value(const std::string& name) const { return find(name).value; }

Mat& ParamStore::value(const std::string& name) {
    return const_cast<Entry&>(find(name)).value;
}

Mat& ParamStore::grad(const std::string& name) {
    return const_cast<Entry&>(find(name)).grad;
}

void ParamStore::zero_grads() {
    for (Entry& e : entries_) e.grad.setZero();
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_)
        n += static_cast<std::size_t>(e.value.rows()) * static_cast<std::size_t>(e.value.cols());
    return n;
}

double Adam::lr_for(std::int64_t step) const {
    if (cfg_.warmup_steps > 0 && step <= cfg_.warmup_steps)
        return cfg_.lr * static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
    return cfg_.lr;
}

void Adam::step(ParamStore& store) {
    ++steps_done_;
    const double lr = lr_for(steps_done_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_done_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_done_));
    for (auto& e : store.entries()) {
        e.m = cfg_.beta1 * e.m + (1.0 - cfg_.beta1) * e.grad;
        e.v = cfg_.beta2 * e.v + (1.0 - cfg_.beta2) * e.grad.cwiseProduct(e.grad);
        const Mat m_hat = e.m / bc1;
        const Mat v_hat = e.v / bc2;
        e.value.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
    }
}

namespace {

void write_array(std::ofstream& out, const std::string& name, const Mat& m) {
    out << "array " << name << " " << m.rows() << " " << m.cols() << "\n";
    std::vector<float> buf(static_cast<std::size_t>(m.size()));
    std::size_t i = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            buf[i++] = static_cast<float>(m(r, c));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    out << "\n";
}

}  // namespace

void save_checkpoint(const std::string& path, const KvConfig& config, const ParamStore& store,
                     const Adam* opt_state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "ENVIRO-CKPT-V1\n[config]\n";
    KvConfig cfg = config;
    if (opt_state) cfg.set("optimizer.steps_done", std::to_string(opt_state->steps_done()));
    out << cfg.serialize();
    out << "[arrays]\n";
    for (const auto& e : store.entries()) {
        write_array(out, e.name, e.value);
        if (opt_state) {
            write_array(out, e.name + ".adam_m", e.m);
            write_array(out, e.name + ".adam_v", e.v);
        }
    }
    if (!out.good()) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line != "ENVIRO-CKPT-V1")
        throw IoError(path + ": not a checkpoint file");
    if (!std::getline(in, line) || line != "[config]")
        throw IoError(path + ": missing [config] section");

    Checkpoint ckpt;
    std::string config_text;
    while (std::getline(in, line)) {
        if (line == "[arrays]") break;
        config_text += line;
        config_text += "\n";
    }
    if (line != "[arrays]") throw IoError(path + ": missing [arrays] section");
    ckpt.config = KvConfig::parse_text(config_text);

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream hdr(line);
        std::string tag, name;
        Eigen::Index rows = 0, cols = 0;
        hdr >> tag >> name >> rows >> cols;
        if (tag != "array" || name.empty() || rows < 0 || cols < 0 || hdr.fail())
            throw IoError(path + ": malformed array header: " + line);
        std::vector<float> buf(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
            throw IoError(path + ": truncated array " + name);
        Mat m(rows, cols);
        std::size_t i = 0;
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r)
                m(r, c) = static_cast<double>(buf[i++]);
        if (ckpt.arrays.count(name)) throw IoError(path + ": duplicate array " + name);
        ckpt.order.push_back(name);
        ckpt.arrays[name] = std::move(m);
        in.get();  // trailing newline after the payload
    }
    return ckpt;
}

void restore_params(ParamStore& store, const Checkpoint& ckpt, Adam* opt) {
    for (auto& e : store.entries()) {
        auto it = ckpt.arrays.find(e.name);
        if (it == ckpt.arrays.end())
            throw IoError("checkpoint is missing array " + e.name);
        if (it->second.rows() != e.value.rows() || it->second.cols() != e.value.cols())
            throw IoError("checkpoint array " + e.name + " has shape " +
                          std::to_string(it->second.rows()) + "x" +
                          std::to_string(it->second.cols()) + ", expected " +
                          std::to_string(e.value.rows()) + "x" +
                          std::to_string(e.value.cols()));
        e.value = it->second;
    }
    if (!opt) return;
    if (!ckpt.config.has("optimizer.steps_done")) return;
    for (auto& e : store.entries()) {
        auto mi = ckpt.arrays.find(e.name + ".adam_m");
        auto vi = ckpt.arrays.find(e.name + ".adam_v");
        if (mi == ckpt.arrays.end() || vi == ckpt.arrays.end())
            throw IoError("checkpoint optimizer state is incomplete for " + e.name);
        e.m = mi->second;
        e.v = vi->second;
    }
    opt->set_steps_done(ckpt.config.get_int64("optimizer.steps_done", 0));
}

}  // namespace enviro::params
