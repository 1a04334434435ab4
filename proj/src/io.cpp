#include "splat/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace splat::io {

namespace {

void put_u32(std::ostream& s, std::uint32_t v) {
    s.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& s, const std::string& path) {
    std::uint32_t v = 0;
    s.read(reinterpret_cast<char*>(&v), 4);
    if (!s) throw ValidationError("truncated header: " + path);
    return v;
}

void put_f64s(std::ostream& s, const double* data, std::size_t n) {
    s.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(double)));
}

void get_f64s(std::istream& s, double* data, std::size_t n, const std::string& path) {
    s.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(double)));
    if (!s) throw ValidationError("truncated data: " + path);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for write: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path);
    return f;
}

void expect_magic(std::istream& s, const char* magic, const std::string& path) {
    char buf[4];
    s.read(buf, 4);
    if (!s || std::string(buf, 4) != magic)
        throw ValidationError(std::string("bad magic, expected ") + magic + ": " + path);
}

constexpr std::uint32_t kFormatVersion = 1;

void expect_version(std::istream& s, const std::string& path) {
    std::uint32_t v = get_u32(s, path);
    if (v != kFormatVersion)
        throw ValidationError("unknown format version " + std::to_string(v) + ": " + path);
}

}  // namespace

void write_sftf(const std::string& path, const FeatureTrack& track) {
    for (const auto& fr : track.frames)
        if (fr.size() != track.dim) throw ValidationError("feature frame dim mismatch");
    auto f = open_out(path);
    f.write("SFTF", 4);
    put_u32(f, kFormatVersion);
    put_u32(f, std::uint32_t(track.frames.size()));
    put_u32(f, std::uint32_t(track.dim));
    for (const auto& fr : track.frames) put_f64s(f, fr.data(), fr.size());
    if (!f) throw ValidationError("short write: " + path);
}

FeatureTrack read_sftf(const std::string& path) {
    auto f = open_in(path);
    expect_magic(f, "SFTF", path);
    expect_version(f, path);
    std::uint32_t nframes = get_u32(f, path), dim = get_u32(f, path);
    FeatureTrack track;
    track.dim = dim;
    track.frames.assign(nframes, std::vector<double>(dim));
    for (auto& fr : track.frames) get_f64s(f, fr.data(), dim, path);
    return track;
}

void write_sflo(const std::string& path, const FlowField& flow) {
    std::size_t npix = flow.width * flow.height;
    for (const auto& fr : flow.frames)
        if (fr.u.size() != npix || fr.v.size() != npix)
            throw ValidationError("flow frame size mismatch");
    auto f = open_out(path);
    f.write("SFLO", 4);
    put_u32(f, kFormatVersion);
    put_u32(f, std::uint32_t(flow.width));
    put_u32(f, std::uint32_t(flow.height));
    put_u32(f, std::uint32_t(flow.frames.size()));
    for (const auto& fr : flow.frames) {
        put_f64s(f, fr.u.data(), npix);
        put_f64s(f, fr.v.data(), npix);
    }
    if (!f) throw ValidationError("short write: " + path);
}

FlowField read_sflo(const std::string& path) {
    auto f = open_in(path);
    expect_magic(f, "SFLO", path);
    expect_version(f, path);
    FlowField flow;
    flow.width = get_u32(f, path);
    flow.height = get_u32(f, path);
    std::uint32_t nframes = get_u32(f, path);
    std::size_t npix = flow.width * flow.height;
    flow.frames.assign(nframes, FlowFrame{std::vector<double>(npix), std::vector<double>(npix)});
    for (auto& fr : flow.frames) {
        get_f64s(f, fr.u.data(), npix, path);
        get_f64s(f, fr.v.data(), npix, path);
    }
    return flow;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_num(const std::string& s, const std::string& path, std::size_t lineno) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("bad number '" + s + "' at " + path + ":" +
                              std::to_string(lineno));
    }
}

}  // namespace

void write_landmarks_csv(const std::string& path, const LandmarkTrack& track) {
    auto f = open_out(path);
    f << "frame,point_id,x,y,weight\n";
    f.precision(17);
    for (std::size_t i = 0; i < track.frames.size(); ++i)
        for (const auto& p : track.frames[i])
            f << i << "," << p.point_id << "," << p.x << "," << p.y << "," << p.weight << "\n";
    if (!f) throw ValidationError("short write: " + path);
}

LandmarkTrack read_landmarks_csv(const std::string& path) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line) || split_csv_line(line) !=
                                      std::vector<std::string>{"frame", "point_id", "x", "y",
                                                               "weight"})
        throw ValidationError("bad landmark CSV header: " + path);
    LandmarkTrack track;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 5)
            throw ValidationError("expected 5 columns at " + path + ":" + std::to_string(lineno));
        std::size_t frame = std::size_t(parse_num(cells[0], path, lineno));
        if (frame >= track.frames.size()) track.frames.resize(frame + 1);
        LandmarkObs obs;
        obs.point_id = int(parse_num(cells[1], path, lineno));
        obs.x = parse_num(cells[2], path, lineno);
        obs.y = parse_num(cells[3], path, lineno);
        obs.weight = parse_num(cells[4], path, lineno);
        if (obs.weight < 0.0 || obs.weight > 1.0)
            throw ValidationError("weight outside [0,1] at " + path + ":" +
                                  std::to_string(lineno));
        track.frames[frame].push_back(obs);
    }
    return track;
}

void write_pose_csv(const std::string& path, const std::vector<PoseRecord>& poses) {
    auto f = open_out(path);
    f << "frame,qw,qx,qy,qz,tx,ty,tz,f\n";
    f.precision(17);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const auto& p = poses[i];
        f << i << "," << p.q.w << "," << p.q.x << "," << p.q.y << "," << p.q.z << "," << p.t.x()
          << "," << p.t.y() << "," << p.t.z() << "," << p.f << "\n";
    }
    if (!f) throw ValidationError("short write: " + path);
}

std::vector<PoseRecord> read_pose_csv(const std::string& path) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line) ||
        split_csv_line(line) != std::vector<std::string>{"frame", "qw", "qx", "qy", "qz", "tx",
                                                         "ty", "tz", "f"})
        throw ValidationError("bad pose CSV header: " + path);
    std::vector<PoseRecord> poses;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 9)
            throw ValidationError("expected 9 columns at " + path + ":" + std::to_string(lineno));
        std::size_t frame = std::size_t(parse_num(cells[0], path, lineno));
        if (frame != poses.size())
            throw ValidationError("non-contiguous frame index at " + path + ":" +
                                  std::to_string(lineno));
        PoseRecord p;
        p.q = Quat{parse_num(cells[1], path, lineno), parse_num(cells[2], path, lineno),
                   parse_num(cells[3], path, lineno), parse_num(cells[4], path, lineno)};
        p.t = Vec3(parse_num(cells[5], path, lineno), parse_num(cells[6], path, lineno),
                   parse_num(cells[7], path, lineno));
        p.f = parse_num(cells[8], path, lineno);
        if (p.f <= 0)
            throw ValidationError("non-positive focal at " + path + ":" + std::to_string(lineno));
        poses.push_back(p);
    }
    return poses;
}

void write_blendshapes_csv(const std::string& path, const std::vector<BlendshapeFrame>& track) {
    auto f = open_out(path);
    f << "frame";
    for (int i = 0; i < 52; ++i) f << ",b" << i;
    f << "\n";
    f.precision(17);
    for (std::size_t i = 0; i < track.size(); ++i) {
        f << i;
        for (double v : track[i]) f << "," << v;
        f << "\n";
    }
    if (!f) throw ValidationError("short write: " + path);
}

std::vector<BlendshapeFrame> read_blendshapes_csv(const std::string& path) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw ValidationError("empty blendshape CSV: " + path);
    auto header = split_csv_line(line);
    if (header.size() != 53 || header[0] != "frame")
        throw ValidationError("bad blendshape CSV header: " + path);
    std::vector<BlendshapeFrame> track;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 53)
            throw ValidationError("expected 53 columns at " + path + ":" +
                                  std::to_string(lineno));
        BlendshapeFrame fr;
        for (int i = 0; i < 52; ++i)
            fr[std::size_t(i)] = parse_num(cells[std::size_t(i + 1)], path, lineno);
        track.push_back(fr);
    }
    return track;
}

void write_checkpoint(const std::string& path, const std::map<std::string, Tensor>& sections) {
    for (const auto& [name, t] : sections)
        for (double v : t.data)
            if (!std::isfinite(v))
                throw ValidationError("checkpoint section '" + name + "' has non-finite values");
    auto f = open_out(path);
    f.write("SPCK", 4);
    put_u32(f, kFormatVersion);
    put_u32(f, std::uint32_t(sections.size()));
    for (const auto& [name, t] : sections) {
        put_u32(f, std::uint32_t(name.size()));
        f.write(name.data(), std::streamsize(name.size()));
        put_u32(f, std::uint32_t(t.shape.size()));
        for (auto d : t.shape) put_u32(f, std::uint32_t(d));
        put_f64s(f, t.data.data(), t.data.size());
    }
    if (!f) throw ValidationError("short write: " + path);
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
    auto f = open_in(path);
    expect_magic(f, "SPCK", path);
    expect_version(f, path);
    std::uint32_t count = get_u32(f, path);
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = get_u32(f, path);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        if (!f) throw ValidationError("truncated section name: " + path);
        std::uint32_t ndim = get_u32(f, path);
        Shape shape(ndim);
        for (auto& d : shape) d = get_u32(f, path);
        Tensor t{shape};
        get_f64s(f, t.data.data(), t.data.size(), path);
        if (!t.all_finite()) throw NumericalError("non-finite checkpoint section " + name);
        out[name] = std::move(t);
    }
    return out;
}

namespace {
std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}
}  // namespace

std::string Config::get_str(const std::string& k, const std::string& dflt) const {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : it->second;
}

double Config::get_double(const std::string& k, double dflt) const {
    auto it = kv.find(k);
    if (it == kv.end()) return dflt;
    return parse_num(it->second, "config key " + k, 0);
}

long Config::get_int(const std::string& k, long dflt) const {
    double v = get_double(k, double(dflt));
    if (v != std::floor(v)) throw ValidationError("config key " + k + " is not an integer");
    return long(v);
}

Config parse_config_text(const std::string& text) {
    Config cfg;
    std::istringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + " missing '='");
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        if (key.empty())
            throw ValidationError("config line " + std::to_string(lineno) + " has empty key");
        cfg.kv[key] = val;
    }
    return cfg;
}

Config read_config(const std::string& path) {
    auto f = open_in(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void atomic_write(const std::string& path,
                  const std::function<void(const std::string&)>& writer) {
    std::string tmp = path + ".tmp";
    try {
        writer(tmp);
    } catch (...) {
        std::remove(tmp.c_str());
        throw;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw ValidationError("cannot rename into place: " + path);
    }
}

std::uint64_t fnv1a(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path) {
    auto f = open_in(path);
    std::uint64_t h = 14695981039346656037ull;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace splat::io
