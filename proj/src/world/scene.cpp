#include <algorithm>
#include <cmath>
#include <set>

#include "refgame/error.hpp"
#include "refgame/rng.hpp"
#include "refgame/world.hpp"

namespace refgame::world {

namespace {

void check_list(const std::vector<std::string>& list, const char* what) {
    require(!list.empty(), ErrorCode::invalid_argument, std::string("catalog: empty ") + what);
    std::set<std::string> seen(list.begin(), list.end());
    require(seen.size() == list.size(), ErrorCode::invalid_argument,
            std::string("catalog: duplicate entry in ") + what);
}

// Template identifiers; the numbering is persisted in corpus files.
enum Template : int {
    kCharAction = 0,
    kCharPairAction = 1,
    kScaredOf = 2,
    kPropColor = 3,
    kThereIs = 4,
    kCharNearProp = 5,
    kPropNearProp = 6,
    kWearing = 7,
    kLeftOf = 8,
    kRightOf = 9,
    kNextTo = 10,
};

bool adjacent(const SceneObject& a, const SceneObject& b) {
    return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)) == 1;
}

int index_of(const std::vector<std::string>& list, const std::string& s) {
    auto it = std::find(list.begin(), list.end(), s);
    return it == list.end() ? -1 : static_cast<int>(it - list.begin());
}

class Renderer {
public:
    Renderer(const Scene& scene, const Catalog& catalog) : scene_(scene), catalog_(catalog) {}

    // Noun phrase for an object: proper names bare, everything else "the X".
    void ref(std::vector<std::string>& out, int obj) const {
        const SceneObject& o = scene_.objects[obj];
        if (o.kind == ObjectKind::character) {
            const std::string& name = catalog_.characters[o.type];
            if (index_of(catalog_.proper_names, name) < 0) out.push_back("the");
            out.push_back(name);
        } else {
            out.push_back("the");
            out.push_back(catalog_.props[o.type]);
        }
    }

    std::vector<std::string> render(int template_id, const std::vector<int>& a) const {
        std::vector<std::string> t;
        const auto& objs = scene_.objects;
        auto word = [&](const std::string& w) { t.push_back(w); };
        switch (template_id) {
            case kCharAction:
                ref(t, a[0]), word("is"), word(catalog_.actions[objs[a[0]].action]);
                break;
            case kCharPairAction:
                ref(t, a[0]), word("and"), ref(t, a[1]), word("are"),
                    word(catalog_.actions[objs[a[0]].action]);
                break;
            case kScaredOf:
                ref(t, a[0]), word("is"), word("scared"), word("of"), ref(t, a[1]);
                break;
            case kPropColor:
                ref(t, a[0]), word("is"), word(catalog_.colors[objs[a[0]].color]);
                break;
            case kThereIs:
                word("there"), word("is"), word("a"), word(catalog_.colors[objs[a[0]].color]),
                    word(catalog_.props[objs[a[0]].type]);
                break;
            case kCharNearProp:
            case kPropNearProp:
                ref(t, a[0]), word("is"), word("near"), ref(t, a[1]);
                break;
            case kWearing:
                ref(t, a[0]), word("is"), word("wearing"), word("a"),
                    word(catalog_.colors[objs[a[1]].color]), word(catalog_.props[objs[a[1]].type]);
                break;
            case kLeftOf:
                ref(t, a[0]), word("is"), word("left"), word("of"), ref(t, a[1]);
                break;
            case kRightOf:
                ref(t, a[0]), word("is"), word("right"), word("of"), ref(t, a[1]);
                break;
            case kNextTo:
                ref(t, a[0]), word("is"), word("next"), word("to"), ref(t, a[1]);
                break;
            default:
                fail(ErrorCode::invalid_argument, "unknown caption template " +
                                                      std::to_string(template_id));
        }
        return t;
    }

    bool holds(int template_id, const std::vector<int>& a) const {
        const auto& objs = scene_.objects;
        const int n = static_cast<int>(objs.size());
        for (int i : a)
            if (i < 0 || i >= n) return false;
        auto is_char = [&](int i) { return objs[i].kind == ObjectKind::character; };
        auto is_prop = [&](int i) { return objs[i].kind == ObjectKind::prop; };
        const int scared = index_of(catalog_.actions, "scared");
        const int hat = index_of(catalog_.props, "hat");
        switch (template_id) {
            case kCharAction:
                return a.size() == 1 && is_char(a[0]);
            case kCharPairAction:
                return a.size() == 2 && a[0] < a[1] && is_char(a[0]) && is_char(a[1]) &&
                       objs[a[0]].action == objs[a[1]].action;
            case kScaredOf:
                return a.size() == 2 && a[0] != a[1] && is_char(a[0]) && is_char(a[1]) &&
                       scared >= 0 && objs[a[0]].action == scared;
            case kPropColor:
            case kThereIs:
                return a.size() == 1 && is_prop(a[0]);
            case kCharNearProp:
                return a.size() == 2 && is_char(a[0]) && is_prop(a[1]) &&
                       adjacent(objs[a[0]], objs[a[1]]);
            case kPropNearProp:
                return a.size() == 2 && a[0] < a[1] && is_prop(a[0]) && is_prop(a[1]) &&
                       adjacent(objs[a[0]], objs[a[1]]);
            case kWearing:
                return a.size() == 2 && is_char(a[0]) && is_prop(a[1]) && hat >= 0 &&
                       objs[a[1]].type == hat && objs[a[1]].x == objs[a[0]].x &&
                       objs[a[1]].y == objs[a[0]].y - 1;
            case kLeftOf:
                return a.size() == 2 && a[0] != a[1] && is_char(a[0]) &&
                       objs[a[0]].x < objs[a[1]].x;
            case kRightOf:
                return a.size() == 2 && a[0] != a[1] && is_char(a[0]) &&
                       objs[a[0]].x > objs[a[1]].x;
            case kNextTo:
                return a.size() == 2 && a[0] < a[1] && is_char(a[0]) && is_char(a[1]) &&
                       adjacent(objs[a[0]], objs[a[1]]);
            default:
                return false;
        }
    }

private:
    const Scene& scene_;
    const Catalog& catalog_;
};

}  // namespace

void Catalog::validate() const {
    check_list(characters, "characters");
    check_list(props, "props");
    check_list(actions, "actions");
    check_list(colors, "colors");
    require(grid_width >= 1 && grid_height >= 1, ErrorCode::invalid_argument,
            "catalog: grid dimensions must be >= 1");
    std::set<std::string> all(characters.begin(), characters.end());
    for (const auto& p : props)
        require(all.insert(p).second, ErrorCode::invalid_argument,
                "catalog: '" + p + "' is both a character and a prop");
    require(grid_width * grid_height >= 5, ErrorCode::invalid_argument,
            "catalog: grid must hold at least 5 objects");
}

std::string Caption::text() const {
    std::string s;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) s += ' ';
        s += tokens[i];
    }
    return s;
}

const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::difficult: return "difficult";
        case Difficulty::unsplit: return "unsplit";
    }
    return "unsplit";
}

Scene generate_scene(uint64_t seed, const Catalog& catalog, int64_t id) {
    catalog.validate();
    Rng rng(Rng::mix(seed));
    Scene scene;
    scene.id = id;
    scene.seed = seed;

    const int n_types = catalog.type_count();
    const int max_objects = std::min({5, n_types, catalog.grid_width * catalog.grid_height});
    const int count = rng.uniform_int(2, max_objects);

    std::vector<int> types(n_types);
    for (int i = 0; i < n_types; ++i) types[i] = i;
    rng.shuffle(types);
    std::vector<int> cells(catalog.grid_width * catalog.grid_height);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    rng.shuffle(cells);

    const int n_chars = static_cast<int>(catalog.characters.size());
    std::vector<int> chosen(types.begin(), types.begin() + count);
    std::sort(chosen.begin(), chosen.end());
    for (int k = 0; k < count; ++k) {
        SceneObject o;
        if (chosen[k] < n_chars) {
            o.kind = ObjectKind::character;
            o.type = chosen[k];
            o.action = static_cast<int>(rng.below(catalog.actions.size()));
        } else {
            o.kind = ObjectKind::prop;
            o.type = chosen[k] - n_chars;
            o.color = static_cast<int>(rng.below(catalog.colors.size()));
        }
        o.x = cells[k] % catalog.grid_width;
        o.y = cells[k] / catalog.grid_width;
        scene.objects.push_back(o);
    }
    return scene;
}

std::vector<Caption> all_true_captions(const Scene& scene, const Catalog& catalog) {
    Renderer r(scene, catalog);
    std::vector<Caption> out;
    const int n = static_cast<int>(scene.objects.size());
    auto emit = [&](int t, std::vector<int> args) {
        if (!r.holds(t, args)) return;
        Caption c;
        c.tokens = r.render(t, args);
        c.template_id = t;
        c.args = std::move(args);
        if (std::find_if(out.begin(), out.end(), [&](const Caption& o) {
                return o.tokens == c.tokens;
            }) == out.end())
            out.push_back(std::move(c));
    };
    for (int i = 0; i < n; ++i) {
        emit(kCharAction, {i});
        emit(kPropColor, {i});
        emit(kThereIs, {i});
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            emit(kCharPairAction, {i, j});
            emit(kScaredOf, {i, j});
            emit(kCharNearProp, {i, j});
            emit(kPropNearProp, {i, j});
            emit(kWearing, {i, j});
            emit(kLeftOf, {i, j});
            emit(kRightOf, {i, j});
            emit(kNextTo, {i, j});
        }
    return out;
}

std::vector<Caption> generate_captions(const Scene& scene, const Catalog& catalog, int k) {
    require(k >= 1, ErrorCode::invalid_argument, "generate_captions: k must be >= 1");
    std::vector<Caption> all = all_true_captions(scene, catalog);
    Rng rng(Rng::mix(scene.seed ^ 0x63617074696f6eULL));
    rng.shuffle(all);
    if (static_cast<int>(all.size()) > k) all.resize(k);
    return all;
}

bool caption_holds(const Scene& scene, const Catalog& catalog, const Caption& caption) {
    Renderer r(scene, catalog);
    if (!r.holds(caption.template_id, caption.args)) return false;
    return r.render(caption.template_id, caption.args) == caption.tokens;
}

std::vector<std::string> caption_words(const Catalog& catalog) {
    std::set<std::string> words = {"is", "and", "are", "scared", "of", "the", "there", "a",
                                   "near", "wearing", "left", "right", "next", "to"};
    for (const auto* list : {&catalog.characters, &catalog.props, &catalog.actions, &catalog.colors})
        words.insert(list->begin(), list->end());
    return {words.begin(), words.end()};
}

// ---- features ----------------------------------------------------------------

FeatureLayout::FeatureLayout(const Catalog& catalog)
    : n_characters_(static_cast<int>(catalog.characters.size())),
      n_colors_(static_cast<int>(catalog.colors.size())),
      n_actions_(static_cast<int>(catalog.actions.size())) {
    const int types = catalog.type_count();
    presence = 0;
    color = presence + types;
    action = color + static_cast<int>(catalog.props.size()) * n_colors_;
    position = action + n_characters_ * n_actions_;
    dimension = position + 2 * types;
}

int FeatureLayout::type_slot(ObjectKind kind, int type) const {
    return kind == ObjectKind::character ? type : n_characters_ + type;
}

int FeatureLayout::color_block(int prop_type) const { return color + prop_type * n_colors_; }

int FeatureLayout::action_block(int character_type) const {
    return action + character_type * n_actions_;
}

std::vector<double> encode_scene(const Scene& scene, const Catalog& catalog) {
    const FeatureLayout layout(catalog);
    std::vector<double> v(layout.dimension, 0.0);
    const double wx = catalog.grid_width > 1 ? catalog.grid_width - 1 : 1;
    const double wy = catalog.grid_height > 1 ? catalog.grid_height - 1 : 1;
    for (const SceneObject& o : scene.objects) {
        const int slot = layout.type_slot(o.kind, o.type);
        v[layout.presence + slot] = 1.0;
        if (o.kind == ObjectKind::prop && o.color >= 0) v[layout.color_block(o.type) + o.color] = 1.0;
        if (o.kind == ObjectKind::character && o.action >= 0)
            v[layout.action_block(o.type) + o.action] = 1.0;
        v[layout.position + 2 * slot] = o.x / wx;
        v[layout.position + 2 * slot + 1] = o.y / wy;
    }
    return v;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), ErrorCode::shape_mismatch, "cosine_similarity: length mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

// ---- corpus ----------------------------------------------------------------

const Scene& Corpus::scene(int64_t id) const {
    require(id >= 0 && id < static_cast<int64_t>(scenes.size()), ErrorCode::not_found,
            "unknown scene id " + std::to_string(id));
    return scenes[static_cast<size_t>(id)];
}

const std::vector<Caption>& Corpus::captions_of(int64_t id) const {
    scene(id);
    return captions[static_cast<size_t>(id)];
}

Corpus generate_corpus(int n, uint64_t seed, const Catalog& catalog, int captions_per_scene) {
    require(n >= 1, ErrorCode::invalid_argument, "generate_corpus: n must be >= 1");
    catalog.validate();
    Corpus corpus;
    corpus.catalog = catalog;
    std::set<std::vector<std::array<int, 6>>> seen;
    uint64_t counter = 0;
    while (static_cast<int>(corpus.scenes.size()) < n) {
        const uint64_t scene_seed = Rng::mix(seed * 0x100000001b3ULL + counter++);
        Scene s = generate_scene(scene_seed, catalog, static_cast<int64_t>(corpus.scenes.size()));
        std::vector<std::array<int, 6>> key;
        for (const auto& o : s.objects)
            key.push_back({static_cast<int>(o.kind), o.type, o.color, o.action, o.x, o.y});
        if (!seen.insert(key).second) continue;
        corpus.captions.push_back(generate_captions(s, catalog, captions_per_scene));
        corpus.scenes.push_back(std::move(s));
        require(counter < static_cast<uint64_t>(n) * 100 + 1000, ErrorCode::invalid_argument,
                "generate_corpus: catalog too small for the requested number of distinct scenes");
    }
    return corpus;
}

}  // namespace refgame::world
