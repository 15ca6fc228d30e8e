#include <cstring>
#include <fstream>

#include "maskboot/errors.hpp"
#include "maskboot/png_io.hpp"
#include "maskboot/trainer.hpp"

namespace maskboot::train {

namespace {

constexpr char kMagic[4] = {'M', 'B', 'C', 'K'};

class Writer {
public:
    template <class T>
    void pod(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        buf_.append(s);
    }
    void params(const nn::ParamSet& p) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(p.size()));
        for (std::size_t i = 0; i < p.size(); ++i) {
            str(p.name(i));
            pod<std::int64_t>(p[i].rows());
            pod<std::int64_t>(p[i].cols());
            buf_.append(reinterpret_cast<const char*>(p[i].data()), sizeof(double) * static_cast<std::size_t>(p[i].size()));
        }
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& buf) : buf_(buf) {}
    template <class T>
    T pod() {
        T v;
        need(sizeof v);
        std::memcpy(&v, buf_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    nn::ParamSet params() {
        nn::ParamSet p;
        const auto count = pod<std::uint32_t>();
        for (std::uint32_t i = 0; i < count; ++i) {
            std::string name = str();
            const auto rows = pod<std::int64_t>(), cols = pod<std::int64_t>();
            if (rows < 0 || cols < 0) throw FormatError("checkpoint: negative tensor shape");
            const auto n = static_cast<std::size_t>(rows * cols);
            need(n * sizeof(double));
            Eigen::MatrixXd m(rows, cols);
            std::memcpy(m.data(), buf_.data() + pos_, n * sizeof(double));
            pos_ += n * sizeof(double);
            p.add(std::move(name), std::move(m));
        }
        return p;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (n > buf_.size() - pos_) throw FormatError("checkpoint: payload truncated");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& s) {
    return crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace

void save_checkpoint(const TrainState& st, const RunConfig& cfg, const std::filesystem::path& path) {
    Writer w;
    w.str(config_to_json(cfg).dump());
    w.params(st.online.encoder);
    w.params(st.online.projector);
    w.params(st.online.predictor);
    w.params(st.target.encoder);
    w.params(st.target.projector);
    w.params(st.opt.velocity.encoder);
    w.params(st.opt.velocity.projector);
    w.params(st.opt.velocity.predictor);
    w.pod<std::int64_t>(st.opt.updates);
    w.pod<std::int32_t>(st.epoch);
    w.pod<std::int64_t>(st.step);
    for (const Rng* r : {&st.rng.data, &st.rng.augment, &st.rng.kmeans, &st.rng.negatives}) w.str(r->save());
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(st.masks.size()));
    for (const auto& m : st.masks) {
        w.pod<std::int32_t>(m.height());
        w.pod<std::int32_t>(m.width());
        w.str(std::string(m.labels().values.begin(), m.labels().values.end()));
    }
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(st.events.size()));
    for (const auto& e : st.events) {
        w.pod<std::int32_t>(e.epoch);
        w.pod<std::uint8_t>(static_cast<std::uint8_t>(e.kind));
    }
    w.pod<std::uint64_t>(st.metrics_bytes);

    const std::string& payload = w.bytes();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(kMagic, 4);
        const std::uint32_t version = kCheckpointVersion;
        const std::uint64_t size = payload.size();
        const std::uint32_t crc = crc_of(payload);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&size), sizeof size);
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
        if (!out) throw IoError("short write on checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path, RunConfig* cfg) {
    const auto raw = read_file_bytes(path);
    const std::string file(raw.begin(), raw.end());
    const std::size_t header = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (file.size() < header || std::memcmp(file.data(), kMagic, 4) != 0)
        throw FormatError(path.string() + ": not a checkpoint file");
    std::uint32_t version = 0;
    std::uint64_t size = 0;
    std::memcpy(&version, file.data() + 4, sizeof version);
    std::memcpy(&size, file.data() + 8, sizeof size);
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    if (file.size() != header + size + sizeof(std::uint32_t)) throw FormatError(path.string() + ": checkpoint truncated");
    const std::string payload = file.substr(header, size);
    std::uint32_t crc = 0;
    std::memcpy(&crc, file.data() + header + size, sizeof crc);
    if (crc != crc_of(payload)) throw FormatError(path.string() + ": checkpoint checksum mismatch");

    Reader r(payload);
    TrainState st;
    const std::string cfg_text = r.str();
    if (cfg) *cfg = config_from_json(nlohmann::json::parse(cfg_text));
    st.online.encoder = r.params();
    st.online.projector = r.params();
    st.online.predictor = r.params();
    st.target.encoder = r.params();
    st.target.projector = r.params();
    st.opt.velocity.encoder = r.params();
    st.opt.velocity.projector = r.params();
    st.opt.velocity.predictor = r.params();
    st.opt.updates = r.pod<std::int64_t>();
    st.epoch = r.pod<std::int32_t>();
    st.step = r.pod<std::int64_t>();
    for (Rng* g : {&st.rng.data, &st.rng.augment, &st.rng.kmeans, &st.rng.negatives}) g->load(r.str());
    const auto masks = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < masks; ++i) {
        const int h = r.pod<std::int32_t>(), w = r.pod<std::int32_t>();
        const std::string v = r.str();
        if (h < 0 || w < 0 || v.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w))
            throw FormatError(path.string() + ": corrupt mask record");
        LabelGrid g(h, w);
        std::memcpy(g.values.data(), v.data(), v.size());
        st.masks.emplace_back(std::move(g));
    }
    const auto events = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < events; ++i) {
        Event e;
        e.epoch = r.pod<std::int32_t>();
        const auto k = r.pod<std::uint8_t>();
        if (k > static_cast<std::uint8_t>(EventKind::consistency)) throw FormatError(path.string() + ": bad event kind");
        e.kind = static_cast<EventKind>(k);
        st.events.push_back(e);
    }
    st.metrics_bytes = r.pod<std::uint64_t>();
    if (!r.done()) throw FormatError(path.string() + ": trailing bytes in checkpoint payload");
    return st;
}

}  // namespace maskboot::train
