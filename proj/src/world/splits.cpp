#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "refgame/error.hpp"
#include "refgame/rng.hpp"
#include "refgame/world.hpp"
#include "refgame/world_json.hpp"

namespace refgame::world {

using nlohmann::json;

DatasetSplits make_splits(const std::vector<int64_t>& scene_ids, std::array<double, 3> ratios,
                          uint64_t seed) {
    for (double r : ratios)
        require(r > 0.0 && r < 1.0, ErrorCode::invalid_argument,
                "make_splits: every ratio must lie in (0, 1)");
    require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) < 1e-9, ErrorCode::invalid_argument,
            "make_splits: ratios must sum to 1");
    require(scene_ids.size() >= 10, ErrorCode::invalid_argument,
            "make_splits: corpus must hold at least 10 scenes");

    std::vector<int64_t> ids = scene_ids;
    Rng rng(Rng::mix(seed ^ 0x73706c6974ULL));
    rng.shuffle(ids);

    // Largest-remainder apportionment keeps every part within 1 of its target.
    const double n = static_cast<double>(ids.size());
    std::array<long, 3> sizes{};
    std::array<double, 3> rem{};
    long assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = n * ratios[i];
        sizes[i] = static_cast<long>(std::floor(exact + 1e-9));
        rem[i] = exact - sizes[i];
        assigned += sizes[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (int k = 0; assigned < static_cast<long>(ids.size()); ++k, ++assigned) ++sizes[order[k % 3]];

    DatasetSplits out;
    auto at = ids.begin();
    out.train.assign(at, at + sizes[0]);
    at += sizes[0];
    out.validation.assign(at, at + sizes[1]);
    at += sizes[1];
    out.test.assign(at, ids.end());
    return out;
}

namespace {

ReferentialInstance make_instance(int64_t id, int64_t target, std::vector<int64_t> distractors,
                                  Difficulty difficulty, Rng& rng) {
    ReferentialInstance inst;
    inst.id = id;
    inst.target = target;
    inst.distractors = std::move(distractors);
    inst.difficulty = difficulty;
    inst.candidates = inst.distractors;
    inst.candidates.push_back(target);
    rng.shuffle(inst.candidates);
    inst.target_index = static_cast<int>(
        std::find(inst.candidates.begin(), inst.candidates.end(), target) - inst.candidates.begin());
    return inst;
}

}  // namespace

ReferentialSplits make_referential_splits(const Corpus& corpus,
                                          const std::vector<int64_t>& test_scenes,
                                          int pairs_per_split, uint64_t seed,
                                          int64_t first_instance_id) {
    require(test_scenes.size() >= 2, ErrorCode::invalid_argument,
            "make_referential_splits: need at least 2 test scenes");
    require(pairs_per_split >= 1, ErrorCode::invalid_argument,
            "make_referential_splits: pairs_per_split must be >= 1");

    std::vector<std::vector<double>> features;
    features.reserve(test_scenes.size());
    for (int64_t id : test_scenes) features.push_back(encode_scene(corpus.scene(id), corpus.catalog));

    struct Pair {
        double similarity;
        int a;
        int b;
    };
    std::vector<Pair> pairs;
    const int n = static_cast<int>(test_scenes.size());
    pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (test_scenes[i] == test_scenes[j]) continue;
            pairs.push_back({cosine_similarity(features[i], features[j]), i, j});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        if (x.similarity != y.similarity) return x.similarity < y.similarity;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });
    const size_t tercile = pairs.size() / 3;
    require(tercile >= static_cast<size_t>(pairs_per_split), ErrorCode::invalid_argument,
            "make_referential_splits: tercile holds " + std::to_string(tercile) +
                " pairs, fewer than the requested " + std::to_string(pairs_per_split));

    Rng rng(Rng::mix(seed ^ 0x726566737074ULL));
    auto draw = [&](size_t begin, Difficulty d, int64_t first_id) {
        std::vector<size_t> idx(tercile);
        std::iota(idx.begin(), idx.end(), begin);
        // Partial Fisher-Yates: the first pairs_per_split entries are the sample.
        for (int k = 0; k < pairs_per_split; ++k) {
            const size_t j = k + rng.below(idx.size() - k);
            std::swap(idx[k], idx[j]);
        }
        std::vector<ReferentialInstance> out;
        for (int k = 0; k < pairs_per_split; ++k) {
            const Pair& p = pairs[idx[k]];
            int64_t target = test_scenes[p.a], distractor = test_scenes[p.b];
            if (rng.below(2) == 1) std::swap(target, distractor);
            out.push_back(make_instance(first_id + k, target, {distractor}, d, rng));
        }
        return out;
    };
    ReferentialSplits out;
    out.easy = draw(0, Difficulty::easy, first_instance_id);
    out.difficult = draw(pairs.size() - tercile, Difficulty::difficult,
                         first_instance_id + pairs_per_split);
    return out;
}

std::vector<ReferentialInstance> sample_instances(const std::vector<int64_t>& pool, int count,
                                                  int distractors, uint64_t seed,
                                                  int64_t first_instance_id) {
    require(distractors >= 1, ErrorCode::invalid_argument, "sample_instances: need >= 1 distractor");
    require(static_cast<int>(pool.size()) > distractors, ErrorCode::invalid_argument,
            "sample_instances: pool smaller than candidate count");
    Rng rng(Rng::mix(seed ^ 0x696e7374ULL));
    std::vector<ReferentialInstance> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        std::vector<int64_t> chosen;
        while (static_cast<int>(chosen.size()) < distractors + 1) {
            const int64_t id = pool[rng.below(pool.size())];
            if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) chosen.push_back(id);
        }
        const int64_t target = chosen[0];
        chosen.erase(chosen.begin());
        out.push_back(make_instance(first_instance_id + k, target, chosen, Difficulty::unsplit, rng));
    }
    return out;
}

// ---- persistence -------------------------------------------------------------

namespace {

json object_json(const SceneObject& o, const Catalog& c) {
    json j;
    j["kind"] = o.kind == ObjectKind::character ? "character" : "prop";
    j["type"] = o.kind == ObjectKind::character ? c.characters[o.type] : c.props[o.type];
    j["color"] = o.color >= 0 ? json(c.colors[o.color]) : json(nullptr);
    j["action"] = o.action >= 0 ? json(c.actions[o.action]) : json(nullptr);
    j["x"] = o.x;
    j["y"] = o.y;
    return j;
}

int lookup(const std::vector<std::string>& list, const std::string& s, const char* what) {
    auto it = std::find(list.begin(), list.end(), s);
    require(it != list.end(), ErrorCode::invalid_argument,
            std::string("corpus: unknown ") + what + " '" + s + "'");
    return static_cast<int>(it - list.begin());
}

SceneObject object_from_json(const json& j, const Catalog& c) {
    SceneObject o;
    o.kind = j.at("kind") == "character" ? ObjectKind::character : ObjectKind::prop;
    o.type = o.kind == ObjectKind::character ? lookup(c.characters, j.at("type"), "character")
                                             : lookup(c.props, j.at("type"), "prop");
    if (!j.at("color").is_null()) o.color = lookup(c.colors, j.at("color"), "color");
    if (!j.at("action").is_null()) o.action = lookup(c.actions, j.at("action"), "action");
    o.x = j.at("x");
    o.y = j.at("y");
    return o;
}

json instance_json(const ReferentialInstance& r) {
    return {{"id", r.id},
            {"target", r.target},
            {"distractors", r.distractors},
            {"candidates", r.candidates},
            {"target_index", r.target_index},
            {"difficulty", difficulty_name(r.difficulty)}};
}

ReferentialInstance instance_from_json(const json& j) {
    ReferentialInstance r;
    r.id = j.at("id");
    r.target = j.at("target");
    r.distractors = j.at("distractors").get<std::vector<int64_t>>();
    r.candidates = j.at("candidates").get<std::vector<int64_t>>();
    r.target_index = j.at("target_index");
    const std::string d = j.at("difficulty");
    r.difficulty = d == "easy" ? Difficulty::easy
                   : d == "difficult" ? Difficulty::difficult
                                      : Difficulty::unsplit;
    return r;
}

}  // namespace

json scene_to_json(const Scene& s, const std::vector<Caption>& caps, const Catalog& c) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["id"] = s.id;
    j["seed"] = s.seed;
    j["objects"] = json::array();
    for (const auto& o : s.objects) j["objects"].push_back(object_json(o, c));
    j["captions"] = json::array();
    for (const auto& cap : caps)
        j["captions"].push_back({{"text", cap.text()}, {"template", cap.template_id}, {"args", cap.args}});
    return j;
}

json scene_objects_json(const Scene& s, const Catalog& c) {
    json arr = json::array();
    for (const auto& o : s.objects) arr.push_back(object_json(o, c));
    return arr;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    for (size_t i = 0; i < corpus.scenes.size(); ++i)
        out << scene_to_json(corpus.scenes[i], corpus.captions[i], corpus.catalog).dump() << '\n';
}

Corpus load_corpus(const std::filesystem::path& path, const Catalog& catalog) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::not_found, "corpus not found: " + path.string());
    Corpus corpus;
    corpus.catalog = catalog;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        require(j.at("schema_version") == kSchemaVersion, ErrorCode::version_mismatch,
                "corpus schema_version mismatch in " + path.string());
        Scene s;
        s.id = j.at("id");
        s.seed = j.at("seed");
        require(s.id == static_cast<int64_t>(corpus.scenes.size()), ErrorCode::io,
                "corpus ids must be dense and ordered");
        for (const auto& o : j.at("objects")) s.objects.push_back(object_from_json(o, catalog));
        std::vector<Caption> caps;
        for (const auto& c : j.at("captions")) {
            Caption cap;
            cap.template_id = c.at("template");
            cap.args = c.at("args").get<std::vector<int>>();
            const std::string text = c.at("text");
            size_t start = 0;
            while (start < text.size()) {
                size_t end = text.find(' ', start);
                if (end == std::string::npos) end = text.size();
                cap.tokens.push_back(text.substr(start, end - start));
                start = end + 1;
            }
            caps.push_back(std::move(cap));
        }
        corpus.scenes.push_back(std::move(s));
        corpus.captions.push_back(std::move(caps));
    }
    return corpus;
}

void save_splits(const DatasetSplits& splits, const std::filesystem::path& path) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["train"] = splits.train;
    j["validation"] = splits.validation;
    j["test"] = splits.test;
    j["easy"] = json::array();
    for (const auto& r : splits.easy) j["easy"].push_back(instance_json(r));
    j["difficult"] = json::array();
    for (const auto& r : splits.difficult) j["difficult"].push_back(instance_json(r));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out << j.dump(1) << '\n';
}

DatasetSplits load_splits(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::not_found, "splits manifest not found: " + path.string());
    const json j = json::parse(in);
    require(j.at("schema_version") == kSchemaVersion, ErrorCode::version_mismatch,
            "splits schema_version mismatch in " + path.string());
    DatasetSplits s;
    s.train = j.at("train").get<std::vector<int64_t>>();
    s.validation = j.at("validation").get<std::vector<int64_t>>();
    s.test = j.at("test").get<std::vector<int64_t>>();
    for (const auto& r : j.at("easy")) s.easy.push_back(instance_from_json(r));
    for (const auto& r : j.at("difficult")) s.difficult.push_back(instance_from_json(r));
    return s;
}

}  // namespace refgame::world
