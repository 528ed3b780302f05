#include "heed/pagegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string_view>

#include <json.hpp>

#include "heed/extractor.hpp"
#include "heed/html.hpp"
#include "heed/rng.hpp"

namespace heed {

namespace {

using html::DomNode;
using Attrs = std::vector<std::pair<std::string, std::string>>;

struct Lexicon {
  std::string_view lang;
  std::vector<std::string_view> adjectives;
  std::vector<std::string_view> nouns;
  std::vector<std::string_view> filler;
  std::vector<std::string_view> nav;
  std::string_view description;
  std::string_view related;
  std::string_view reviews;
  std::string_view shipping;
  std::string_view ratings;
  std::string_view save;
  std::string_view add_to_cart;
  std::string_view search;
};

const std::vector<std::string_view> kBrands = {
    "Acmetek", "Zenora", "Nordlys", "Kumova", "Velora", "Orbisa", "Lumio", "Tessaro",
    "Quantix", "Hikaru", "Brivo", "Solenne", "Maxell0", "Arkhon", "Pivra", "Oktava"};

const std::vector<Lexicon>& lexicons() {
  static const std::vector<Lexicon> table = {
      {"en",
       {"Wireless", "Portable", "Compact", "Premium", "Smart", "Ergonomic", "Waterproof",
        "Ultra", "Classic", "Foldable", "Rechargeable", "Stainless", "Digital", "Ceramic"},
       {"Headphones", "Blender", "Backpack", "Keyboard", "Speaker", "Kettle", "Lamp", "Watch",
        "Camera", "Charger", "Jacket", "Mouse", "Monitor", "Drill", "Vacuum", "Sneakers"},
       {"the", "this", "works", "great", "and", "quality", "is", "good", "for", "price", "I",
        "bought", "it", "my", "daughter", "very", "happy", "with", "delivery", "fast", "would",
        "recommend", "battery", "lasts", "long", "easy", "to", "use", "sound", "design",
        "color", "size", "fits", "well", "after", "two", "weeks", "still", "perfect"},
       {"Home", "Deals", "Electronics", "Fashion", "Kitchen", "Garden", "Toys", "Books",
        "Sports", "Account", "Orders", "Cart"},
       "Product description", "Related items", "Customer reviews", "Shipping:", "ratings",
       "Save", "Add to cart", "Search"},
      {"fr",
       {"Sans-fil", "Portable", "Compact", "Premium", "Intelligent", "Ergonomique",
        "Étanche", "Classique", "Pliable", "Rechargeable", "Inoxydable", "Numérique"},
       {"Casque", "Mixeur", "Sac", "Clavier", "Enceinte", "Bouilloire", "Lampe", "Montre",
        "Appareil", "Chargeur", "Veste", "Souris", "Écran", "Perceuse", "Aspirateur"},
       {"le", "la", "produit", "est", "très", "bien", "et", "qualité", "pour", "prix", "je",
        "recommande", "livraison", "rapide", "facile", "à", "utiliser", "son", "couleur",
        "taille", "parfait", "après", "deux", "semaines", "toujours", "content", "de", "mon"},
       {"Accueil", "Offres", "Électronique", "Mode", "Cuisine", "Jardin", "Jouets", "Livres",
        "Sport", "Compte", "Commandes", "Panier"},
       "Description du produit", "Articles similaires", "Avis clients", "Livraison :",
       "évaluations", "Économisez", "Ajouter au panier", "Rechercher"},
      {"de",
       {"Kabellos", "Tragbar", "Kompakt", "Premium", "Smart", "Ergonomisch", "Wasserdicht",
        "Klassisch", "Faltbar", "Wiederaufladbar", "Edelstahl", "Digital"},
       {"Kopfhörer", "Mixer", "Rucksack", "Tastatur", "Lautsprecher", "Wasserkocher", "Lampe",
        "Uhr", "Kamera", "Ladegerät", "Jacke", "Maus", "Monitor", "Bohrer", "Staubsauger"},
       {"der", "die", "das", "Produkt", "ist", "sehr", "gut", "und", "Qualität", "für", "Preis",
        "ich", "empfehle", "Lieferung", "schnell", "einfach", "zu", "benutzen", "Klang",
        "Farbe", "Größe", "passt", "nach", "zwei", "Wochen", "immer", "noch", "perfekt"},
       {"Startseite", "Angebote", "Elektronik", "Mode", "Küche", "Garten", "Spielzeug",
        "Bücher", "Sport", "Konto", "Bestellungen", "Warenkorb"},
       "Produktbeschreibung", "Ähnliche Artikel", "Kundenrezensionen", "Versand:",
       "Bewertungen", "Sparen", "In den Warenkorb", "Suchen"},
      {"es",
       {"Inalámbrico", "Portátil", "Compacto", "Premium", "Inteligente", "Ergonómico",
        "Impermeable", "Clásico", "Plegable", "Recargable", "Digital"},
       {"Auriculares", "Batidora", "Mochila", "Teclado", "Altavoz", "Hervidor", "Lámpara",
        "Reloj", "Cámara", "Cargador", "Chaqueta", "Ratón", "Monitor", "Taladro"},
       {"el", "la", "producto", "es", "muy", "bueno", "y", "calidad", "para", "precio", "lo",
        "recomiendo", "envío", "rápido", "fácil", "de", "usar", "sonido", "color", "tamaño",
        "perfecto", "después", "dos", "semanas", "sigue", "contento", "con", "mi"},
       {"Inicio", "Ofertas", "Electrónica", "Moda", "Cocina", "Jardín", "Juguetes", "Libros",
        "Deportes", "Cuenta", "Pedidos", "Carrito"},
       "Descripción del producto", "Artículos relacionados", "Opiniones de clientes",
       "Envío:", "valoraciones", "Ahorra", "Añadir al carrito", "Buscar"},
      {"it",
       {"Senza-fili", "Portatile", "Compatto", "Premium", "Intelligente", "Ergonomico",
        "Impermeabile", "Classico", "Pieghevole", "Ricaricabile", "Digitale"},
       {"Cuffie", "Frullatore", "Zaino", "Tastiera", "Altoparlante", "Bollitore", "Lampada",
        "Orologio", "Fotocamera", "Caricatore", "Giacca", "Mouse", "Monitor", "Trapano"},
       {"il", "la", "prodotto", "è", "molto", "buono", "e", "qualità", "per", "prezzo", "lo",
        "consiglio", "spedizione", "veloce", "facile", "da", "usare", "suono", "colore",
        "misura", "perfetto", "dopo", "due", "settimane", "ancora", "contento", "con", "mio"},
       {"Home", "Offerte", "Elettronica", "Moda", "Cucina", "Giardino", "Giocattoli", "Libri",
        "Sport", "Account", "Ordini", "Carrello"},
       "Descrizione prodotto", "Articoli correlati", "Recensioni clienti", "Spedizione:",
       "valutazioni", "Risparmia", "Aggiungi al carrello", "Cerca"},
      {"zh",
       {"无线", "便携", "紧凑", "高级", "智能", "人体工学", "防水", "经典", "折叠", "充电",
        "不锈钢", "数码"},
       {"耳机", "搅拌机", "背包", "键盘", "音箱", "水壶", "台灯", "手表", "相机", "充电器",
        "夹克", "鼠标", "显示器", "电钻"},
       {"这个", "产品", "质量", "很", "好", "价格", "实惠", "推荐", "购买", "物流", "快",
        "使用", "方便", "声音", "颜色", "尺寸", "合适", "两", "周", "后", "依然", "完美",
        "满意", "我", "的"},
       {"首页", "优惠", "电子", "时尚", "厨房", "花园", "玩具", "图书", "运动", "账户",
        "订单", "购物车"},
       "商品 描述", "相关 商品", "用户 评价", "运费：", "条评价", "节省", "加入 购物车", "搜索"},
      {"ja",
       {"ワイヤレス", "ポータブル", "コンパクト", "プレミアム", "スマート", "防水", "クラシック",
        "折りたたみ", "充電式", "ステンレス", "デジタル"},
       {"ヘッドホン", "ミキサー", "リュック", "キーボード", "スピーカー", "ケトル", "ランプ",
        "時計", "カメラ", "充電器", "ジャケット", "マウス", "モニター", "ドリル"},
       {"この", "商品", "は", "品質", "が", "とても", "良い", "です", "価格", "おすすめ",
        "配送", "早い", "使い", "やすい", "音", "色", "サイズ", "ぴったり", "二", "週間",
        "後", "も", "完璧", "満足", "私"},
       {"ホーム", "セール", "家電", "ファッション", "キッチン", "ガーデン", "おもちゃ", "本",
        "スポーツ", "アカウント", "注文", "カート"},
       "商品 の 説明", "関連 商品", "カスタマー レビュー", "配送料：", "件の評価", "割引",
       "カート に 入れる", "検索"},
      {"ko",
       {"무선", "휴대용", "소형", "프리미엄", "스마트", "인체공학", "방수", "클래식", "접이식",
        "충전식", "디지털"},
       {"헤드폰", "블렌더", "배낭", "키보드", "스피커", "주전자", "램프", "시계", "카메라",
        "충전기", "재킷", "마우스", "모니터", "드릴"},
       {"이", "제품", "품질", "이", "정말", "좋아요", "가격", "추천", "배송", "빠름", "사용",
        "편리", "소리", "색상", "크기", "딱", "맞아요", "두", "주", "후", "에도", "완벽",
        "만족", "저는"},
       {"홈", "특가", "전자제품", "패션", "주방", "정원", "장난감", "도서", "스포츠", "계정",
        "주문", "장바구니"},
       "상품 설명", "관련 상품", "고객 리뷰", "배송비:", "개 평가", "할인", "장바구니 담기",
       "검색"},
      {"ar",
       {"لاسلكي", "محمول", "صغير", "فاخر", "ذكي", "مريح", "مقاوم", "كلاسيكي", "قابل", "رقمي"},
       {"سماعات", "خلاط", "حقيبة", "لوحة", "مكبر", "غلاية", "مصباح", "ساعة", "كاميرا",
        "شاحن", "سترة", "فأرة", "شاشة", "مثقاب"},
       {"هذا", "المنتج", "جودة", "ممتازة", "السعر", "مناسب", "أنصح", "به", "التوصيل", "سريع",
        "سهل", "الاستخدام", "الصوت", "اللون", "الحجم", "بعد", "أسبوعين", "لا", "يزال",
        "مثالي", "راض", "جدا"},
       {"الرئيسية", "العروض", "الإلكترونيات", "الأزياء", "المطبخ", "الحديقة", "الألعاب",
        "الكتب", "الرياضة", "الحساب", "الطلبات", "السلة"},
       "وصف المنتج", "منتجات ذات صلة", "آراء العملاء", "الشحن:", "تقييم", "وفر",
       "أضف إلى السلة", "بحث"},
  };
  return table;
}

const Lexicon& lexicon_for(std::string_view lang) {
  for (const auto& lex : lexicons())
    if (lex.lang == lang) return lex;
  return lexicons().front();
}

std::string with_grouping(long long value, char sep) {
  std::string digits = std::to_string(value);
  std::string out;
  const int n = static_cast<int>(digits.size());
  for (int i = 0; i < n; ++i) {
    out.push_back(digits[static_cast<std::size_t>(i)]);
    const int rest = n - i - 1;
    if (rest > 0 && rest % 3 == 0 && sep != 0) out.push_back(sep);
  }
  return out;
}

// Price surface form in a language's template. `cents` is the amount in
// hundredths of the major unit.
std::string format_price(std::string_view lang, long long cents) {
  const long long major = cents / 100;
  const long long minor = cents % 100;
  char frac[4];
  std::snprintf(frac, sizeof frac, "%02lld", minor);
  if (lang == "en") return "$" + with_grouping(major, ',') + "." + frac;
  if (lang == "de" || lang == "es" || lang == "it")
    return with_grouping(major, '.') + "," + frac + " €";
  if (lang == "fr") return std::to_string(major) + "," + frac + " €";
  if (lang == "ja") return "￥" + with_grouping(major * 100 + minor, ',');
  if (lang == "zh") return "¥" + std::to_string(major) + "." + frac;
  if (lang == "ko") return with_grouping(major * 1000, ',') + "원";
  if (lang == "ar") return std::to_string(major) + "." + frac + " ر.س";
  return "$" + std::to_string(major) + "." + frac;
}

std::size_t count_words(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::string hex_color(const std::array<int, 3>& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02X%02X%02X", c[0], c[1], c[2]);
  return buf;
}

// Builds a DOM in document order while counting the tokens extraction will
// emit, so entity spans come from the generator's own bookkeeping.
class PageBuilder {
 public:
  PageBuilder() : root_(DomNode::document()) { stack_.push_back(&root_); }

  void open(std::string tag, Attrs attrs = {}) {
    top().children.push_back(DomNode::element(std::move(tag), std::move(attrs)));
    stack_.push_back(&top().children.back());
  }
  void close() { stack_.pop_back(); }

  // Element whose subtree extraction skips entirely (head, input, ...).
  void skipped(std::string tag, Attrs attrs = {}, std::string inner = {}) {
    DomNode el = DomNode::element(std::move(tag), std::move(attrs));
    if (!inner.empty() && !html::is_void_element(el.tag))
      el.children.push_back(DomNode::text_node(std::move(inner)));
    top().children.push_back(std::move(el));
  }

  void text(std::string s) {
    if (!counting_suspended_) tokens_ += count_words(s);
    top().children.push_back(DomNode::text_node(std::move(s)));
  }

  void newline() { top().children.push_back(DomNode::text_node("\n")); }

  void img(const std::string& src, int w, int h) {
    top().children.push_back(DomNode::element(
        "img", {{"src", src}, {"width", std::to_string(w)}, {"height", std::to_string(h)}}));
    if (!counting_suspended_) ++tokens_;
  }

  void leaf(std::string tag, std::string s, Attrs attrs = {}) {
    open(std::move(tag), std::move(attrs));
    text(std::move(s));
    close();
  }

  std::size_t tokens() const { return tokens_; }
  void set_counting_suspended(bool s) { counting_suspended_ = s; }

  DomNode take() { return std::move(root_); }

 private:
  DomNode& top() { return *stack_.back(); }

  DomNode root_;
  std::vector<DomNode*> stack_;
  std::size_t tokens_ = 0;
  bool counting_suspended_ = false;
};

struct Theme {
  std::string site;
  int name_font_px = 28;
  int name_weight = 400;
  std::array<int, 3> price_color{177, 39, 4};
  int price_font_px = 24;
  int main_image_px = 400;
  int related_image_px = 120;
  bool gallery_first = true;
  bool repeat_price = false;
  bool has_list_price = true;
};

class PageGenerator {
 public:
  PageGenerator(std::uint64_t seed, std::size_t index, const GenConfig& cfg)
      : cfg_(cfg), rng_(Rng::derive(seed, index, 0x4845454450ULL)), index_(index), seed_(seed) {}

  GeneratedPage run() {
    std::vector<double> weights;
    for (const auto& [lang, w] : cfg_.language_mix) weights.push_back(w);
    lang_ = cfg_.language_mix[rng_.weighted_index(weights)].first;
    lex_ = &lexicon_for(lang_);
    make_theme();

    const double spread = (cfg_.length_max - cfg_.length_min) / 4.0;
    target_ = static_cast<std::size_t>(std::lround(
        std::clamp(rng_.normal(cfg_.length_mean, spread), cfg_.length_min, cfg_.length_max)));
    const bool early = rng_.bernoulli(cfg_.entity_position_bias);

    char id[64];
    std::snprintf(id, sizeof id, "p%llu-%06zu", static_cast<unsigned long long>(seed_), index_);
    page_id_ = id;
    product_id_ = "B0" + std::to_string(100000 + rng_.uniform_int(0, 899999));

    name_ = product_name();
    price_cents_ = rng_.uniform_int(5, 2000) * 100 + rng_.pick(std::vector<long long>{0, 49, 95, 99});
    price_text_ = format_price(lang_, price_cents_);

    b_.open("html", {{"lang", lang_}});
    b_.newline();
    head();
    b_.newline();
    b_.open("body", {{"style", "color:#0F1111;font-size:14px"}});
    b_.newline();
    header();
    if (!early) promo_preamble();
    breadcrumb();
    product();
    description();
    related();

    std::vector<std::string> footer_links;
    for (std::size_t i = 0; i < 6; ++i) footer_links.emplace_back(rng_.pick(lex_->nav));
    const std::size_t footer_tokens = footer_links.size() + 2;
    reviews(target_ > footer_tokens ? target_ - footer_tokens : 0);
    footer(footer_links);
    b_.close();  // body
    b_.newline();
    b_.close();  // html

    html::DomNode dom = b_.take();
    GeneratedPage page;
    page.html = "<!DOCTYPE html>\n" + html::serialize_html(dom);
    page.gold = record_from_dom(dom, cfg_.viewport_width, page_id_, lang_,
                                "https://www." + theme_.site + ".example/" + lang_ + "/dp/" +
                                    product_id_);
    if (page.gold.size() != b_.tokens())
      throw std::logic_error("generator token bookkeeping diverged from layout");
    std::vector<std::pair<EntitySpan, std::string>> labeled;
    for (std::size_t i = 0; i < spans_.size(); ++i) labeled.emplace_back(spans_[i], span_text_[i]);
    std::stable_sort(labeled.begin(), labeled.end(), [](const auto& a, const auto& b) {
      if (a.first.task != b.first.task) return a.first.task < b.first.task;
      return a.first.start < b.first.start;
    });
    for (auto& [span, text] : labeled) {
      page.gold.spans.push_back(span);
      page.entity_text.push_back(std::move(text));
    }
    return page;
  }

 private:
  void make_theme() {
    static const std::vector<std::string> kSites = {"shopmart", "buynow", "megastore",
                                                    "dealhub", "kaufhaus", "tienda"};
    static const std::vector<std::array<int, 3>> kPriceColors = {
        {177, 39, 4}, {204, 12, 57}, {228, 0, 27}, {194, 24, 7}};
    theme_.site = rng_.pick(kSites);
    theme_.name_font_px = static_cast<int>(rng_.uniform_int(12, 16)) * 2;
    theme_.name_weight = rng_.bernoulli(0.5) ? 700 : 400;
    theme_.price_color = rng_.pick(kPriceColors);
    theme_.price_font_px = static_cast<int>(rng_.uniform_int(18, 28));
    theme_.main_image_px = static_cast<int>(rng_.uniform_int(15, 25)) * 20;
    theme_.related_image_px = static_cast<int>(rng_.uniform_int(9, 14)) * 10;
    theme_.gallery_first = rng_.bernoulli(0.6);
    theme_.repeat_price = rng_.bernoulli(0.15);
    theme_.has_list_price = rng_.bernoulli(0.6);
  }

  std::string product_name() {
    std::string s(rng_.pick(kBrands));
    const auto n_adj = rng_.uniform_int(1, 3);
    for (std::int64_t i = 0; i < n_adj; ++i) s += " " + std::string(rng_.pick(lex_->adjectives));
    s += " " + std::string(rng_.pick(lex_->nouns));
    if (rng_.bernoulli(0.5)) s += " " + std::to_string(rng_.uniform_int(2, 12)) + "00";
    return s;
  }

  std::string filler_sentence(std::size_t words) {
    std::string s;
    for (std::size_t i = 0; i < words; ++i) {
      if (i) s += ' ';
      s += rng_.pick(lex_->filler);
    }
    return s;
  }

  std::string image_url(std::string_view kind, int w) {
    return "https://img." + theme_.site + ".example/images/I/" + product_id_ + "_" +
           std::to_string(rng_.uniform_int(100, 999)) + "_" + std::string(kind) +
           std::to_string(w) + "_.jpg";
  }

  void begin_entity() { entity_start_ = b_.tokens(); }
  void end_entity(Task task, std::string text) {
    spans_.push_back(EntitySpan{task, static_cast<int>(entity_start_),
                                static_cast<int>(b_.tokens()) - 1});
    span_text_.push_back(std::move(text));
  }

  void head() {
    b_.open("head");
    b_.skipped("meta", {{"charset", "utf-8"}});
    b_.skipped("title", {}, name_ + " - " + theme_.site);
    b_.skipped("style", {}, "body{margin:0} .price{font-weight:bold}");
    b_.skipped("script", {}, "window.dataLayer=[];if(a<b){track('view');}");
    b_.close();
  }

  void header() {
    b_.open("div", {{"class", "header"}});
    b_.open("a", {{"href", "/"}});
    b_.img("https://" + theme_.site + ".example/static/logo.svg", 120, 40);
    b_.close();
    b_.text(" ");
    const auto n_links = rng_.uniform_int(4, 9);
    for (std::int64_t i = 0; i < n_links; ++i) {
      b_.leaf("a", std::string(lex_->nav[static_cast<std::size_t>(i) % lex_->nav.size()]),
              {{"href", "/c/" + std::to_string(i)}});
      b_.text(" ");
    }
    b_.close();
    b_.newline();
    b_.open("form", {{"class", "search"}, {"action", "/s"}});
    b_.skipped("input", {{"type", "text"}, {"name", "q"}, {"placeholder", std::string(lex_->search)}});
    b_.skipped("button", {{"type", "submit"}}, std::string(lex_->search));
    b_.close();
    b_.newline();
    // Collapsed dropdown: zero-height clipping container.
    b_.open("div", {{"class", "dropdown"}, {"style", "overflow:hidden;height:0px"}});
    for (std::size_t i = 0; i < 3; ++i) {
      b_.leaf("a", std::string(rng_.pick(lex_->nav)), {{"href", "/d/" + std::to_string(i)}});
      b_.text(" ");
    }
    b_.close();
    b_.newline();
  }

  void promo_preamble() {
    b_.open("div", {{"class", "promo"}});
    b_.img("https://ads.example/banner/" + std::to_string(rng_.uniform_int(1, 99)) + ".gif", 728,
           90);
    b_.newline();
    while (b_.tokens() < kEarlyEntityWindow + 5) {
      b_.open("p");
      b_.text(filler_sentence(static_cast<std::size_t>(rng_.uniform_int(12, 30))));
      b_.close();
      b_.newline();
      b_.open("ul");
      for (int i = 0; i < 4; ++i) {
        b_.open("li");
        b_.leaf("a", std::string(rng_.pick(lex_->nav)) + " " + std::string(rng_.pick(lex_->nouns)),
                {{"href", "/p/" + std::to_string(i)}});
        b_.close();
      }
      b_.close();
      b_.newline();
    }
    b_.close();
    b_.newline();
  }

  void breadcrumb() {
    b_.open("div", {{"class", "breadcrumb"}, {"style", "font-size:12px"}});
    const auto n = rng_.uniform_int(2, 3);
    for (std::int64_t i = 0; i < n; ++i) {
      if (i) b_.text(" › ");
      b_.leaf("a", std::string(rng_.pick(lex_->nav)), {{"href", "/b/" + std::to_string(i)}});
    }
    b_.close();
    b_.newline();
  }

  void main_image() {
    b_.open("div", {{"class", "gallery"}});
    const std::string url = image_url("SL", theme_.main_image_px);
    begin_entity();
    b_.img(url, theme_.main_image_px, theme_.main_image_px);
    end_entity(Task::Image, url);
    b_.newline();
    const auto thumbs = rng_.uniform_int(0, 3);
    for (std::int64_t i = 0; i < thumbs; ++i) {
      b_.img(image_url("SS", 56), 56, 56);
      b_.text(" ");
    }
    b_.close();
    b_.newline();
  }

  void price_line(bool main) {
    b_.open("span", {{"class", "price"},
                     {"style", "color:" + hex_color(theme_.price_color) +
                                   ";font-size:" + std::to_string(theme_.price_font_px) + "px"}});
    if (main) begin_entity();
    b_.text(price_text_);
    if (main) end_entity(Task::Price, price_text_);
    b_.close();
  }

  void info() {
    b_.open("div", {{"class", "info"}});
    b_.open("h1", {{"style", "font-size:" + std::to_string(theme_.name_font_px) +
                                 "px;font-weight:" + std::to_string(theme_.name_weight)}});
    begin_entity();
    b_.text(name_);
    end_entity(Task::Name, name_);
    b_.close();
    b_.newline();

    b_.open("div", {{"class", "rating"}});
    b_.leaf("a", std::to_string(rng_.uniform_int(30, 50) / 10.0).substr(0, 3) + " ★★★★☆",
            {{"href", "#reviews"}, {"style", "color:#007185"}});
    b_.text(" ");
    b_.leaf("span", with_grouping(rng_.uniform_int(3, 25000), ',') + " " +
                        std::string(lex_->ratings));
    b_.close();
    b_.newline();

    b_.open("div", {{"class", "price-box"}});
    price_line(true);
    if (theme_.has_list_price) {
      const long long list = price_cents_ + rng_.uniform_int(5, 60) * 100;
      b_.text(" ");
      b_.open("span", {{"style", "color:#565959;font-size:13px"}});
      b_.leaf("s", format_price(lang_, list));
      b_.close();
      b_.text(" ");
      b_.leaf("span",
              std::string(lex_->save) + " " + format_price(lang_, list - price_cents_),
              {{"style", "color:#067D62"}});
    }
    b_.close();
    b_.newline();

    b_.open("div", {{"class", "shipping"}});
    b_.text(std::string(lex_->shipping) + " " +
            format_price(lang_, rng_.uniform_int(1, 15) * 100 + 99));
    b_.close();
    b_.newline();
    b_.skipped("button", {{"class", "add"}}, std::string(lex_->add_to_cart));
    b_.newline();

    b_.open("ul");
    const auto bullets = rng_.uniform_int(2, 5);
    for (std::int64_t i = 0; i < bullets; ++i) {
      b_.leaf("li", filler_sentence(static_cast<std::size_t>(rng_.uniform_int(4, 9))));
    }
    b_.close();
    b_.newline();
    b_.close();
    b_.newline();
  }

  void product() {
    b_.open("div", {{"class", "product"}});
    b_.newline();
    if (theme_.gallery_first) {
      main_image();
      info();
    } else {
      info();
      main_image();
    }
    b_.close();
    b_.newline();
  }

  void description() {
    b_.open("div", {{"class", "description"}});
    b_.leaf("h2", std::string(lex_->description), {{"style", "font-size:20px"}});
    b_.newline();
    b_.leaf("p", filler_sentence(static_cast<std::size_t>(rng_.uniform_int(10, 25))));
    b_.newline();
    if (theme_.repeat_price) {
      b_.open("div", {{"class", "buybox"}});
      price_line(true);
      b_.close();
      b_.newline();
    }
    b_.close();
    b_.newline();
  }

  void related() {
    b_.open("div", {{"class", "related"}});
    b_.leaf("h2", std::string(lex_->related), {{"style", "font-size:20px"}});
    b_.newline();
    const auto n = rng_.uniform_int(2, 4);
    for (std::int64_t i = 0; i < n; ++i) {
      b_.open("div", {{"class", "item"}});
      b_.img(image_url("AC_UL", theme_.related_image_px), theme_.related_image_px,
             theme_.related_image_px);
      b_.newline();
      b_.leaf("a",
              std::string(rng_.pick(kBrands)) + " " + std::string(rng_.pick(lex_->adjectives)) +
                  " " + std::string(rng_.pick(lex_->nouns)),
              {{"href", "/dp/x" + std::to_string(i)}, {"style", "font-size:14px"}});
      b_.newline();
      b_.open("div");
      b_.leaf("span", format_price(lang_, rng_.uniform_int(5, 2000) * 100 + 99),
              {{"style", "color:#0F1111;font-size:14px"}});
      b_.close();
      b_.close();
      b_.newline();
    }
    b_.close();
    b_.newline();
  }

  void reviews(std::size_t budget_end) {
    b_.open("div", {{"class", "reviews"}});
    b_.leaf("h2", std::string(lex_->reviews), {{"style", "font-size:20px"}});
    b_.newline();
    // A hidden translation toggle: present in the DOM, not visible.
    b_.leaf("div", filler_sentence(3), {{"style", "visibility:hidden"}});
    b_.newline();
    while (b_.tokens() + 4 <= budget_end) {
      b_.open("div", {{"class", "review"}});
      b_.img("https://" + theme_.site + ".example/avatar/" +
                 std::to_string(rng_.uniform_int(1, 5000)) + ".png",
             32, 32);
      b_.text(" ");
      b_.leaf("b", "user" + std::to_string(rng_.uniform_int(10, 9999)));
      b_.newline();
      const std::size_t remaining = budget_end - b_.tokens();
      const std::size_t words =
          std::min<std::size_t>(remaining, static_cast<std::size_t>(rng_.uniform_int(15, 45)));
      if (words > 0) b_.leaf("p", filler_sentence(words));
      b_.close();
      b_.newline();
    }
    b_.close();
    b_.newline();
  }

  void footer(const std::vector<std::string>& links) {
    b_.open("div", {{"class", "footer"}, {"style", "font-size:12px;color:#DDDDDD"}});
    b_.text("© " + theme_.site + " ");
    for (std::size_t i = 0; i < links.size(); ++i) {
      b_.leaf("a", links[i], {{"href", "/f/" + std::to_string(i)}});
      b_.text(" ");
    }
    b_.close();
    b_.newline();
  }

  const GenConfig& cfg_;
  Rng rng_;
  std::size_t index_;
  std::uint64_t seed_;
  PageBuilder b_;
  Theme theme_;
  std::string lang_;
  const Lexicon* lex_ = nullptr;
  std::size_t target_ = 0;
  std::string page_id_;
  std::string product_id_;
  std::string name_;
  long long price_cents_ = 0;
  std::string price_text_;
  std::size_t entity_start_ = 0;
  std::vector<EntitySpan> spans_;
  std::vector<std::string> span_text_;
};

}  // namespace

std::vector<std::pair<std::string, double>> GenConfig::default_language_mix() {
  // Page counts (thousands) per language.
  const std::vector<std::pair<std::string, double>> sizes = {
      {"en", 180}, {"fr", 90}, {"de", 80}, {"zh", 20}, {"it", 6},
      {"ko", 19},  {"ja", 38}, {"es", 5.9}, {"ar", 24}};
  double total = 0;
  for (const auto& [_, s] : sizes) total += s;
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [lang, s] : sizes) out.emplace_back(lang, s / total);
  return out;
}

void GenConfig::set_length_mean(double mean) {
  length_mean = mean;
  length_min = mean * 400.0 / 750.0;
  length_max = mean * 1000.0 / 750.0;
}

void GenConfig::validate() const {
  if (language_mix.empty()) throw std::invalid_argument("language_mix is empty");
  double total = 0;
  for (const auto& [lang, w] : language_mix) {
    if (w < 0) throw std::invalid_argument("language weight for '" + lang + "' is negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("language weights must sum to 1 (got " + std::to_string(total) + ")");
  if (!(length_mean > 0)) throw std::invalid_argument("length_mean must be > 0");
  if (!(length_min <= length_mean && length_mean <= length_max))
    throw std::invalid_argument("length bounds must satisfy min <= mean <= max");
  if (!(entity_position_bias >= 0 && entity_position_bias <= 1))
    throw std::invalid_argument("entity_position_bias must be in [0,1]");
  if (!(viewport_width > 0)) throw std::invalid_argument("viewport_width must be > 0");
}

GeneratedPage generate_page(std::uint64_t seed, std::size_t page_index, const GenConfig& config) {
  config.validate();
  return PageGenerator(seed, page_index, config).run();
}

SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.dev = n / 10;
  s.test = n / 10;
  s.train = n - s.dev - s.test;
  return s;
}

SplitAssignment assign_splits(std::size_t n_pages, std::uint64_t seed) {
  std::vector<std::size_t> order(n_pages);
  for (std::size_t i = 0; i < n_pages; ++i) order[i] = i;
  Rng rng(Rng::derive(seed, 0x53504C4954ULL));
  rng.shuffle(order);
  const SplitSizes sizes = split_sizes(n_pages);
  SplitAssignment a;
  a.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes.train));
  a.dev.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train),
               order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.dev));
  a.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.dev), order.end());
  for (auto* v : {&a.train, &a.dev, &a.test}) std::sort(v->begin(), v->end());
  return a;
}

CorpusSplits generate_splits(const GenConfig& config) {
  config.validate();
  const SplitAssignment a = assign_splits(config.n_pages, config.seed);
  CorpusSplits out;
  const auto fill = [&](const std::vector<std::size_t>& idx, std::vector<PageRecord>& dst) {
    for (std::size_t i : idx) dst.push_back(generate_page(config.seed, i, config).gold);
  };
  fill(a.train, out.train);
  fill(a.dev, out.dev);
  fill(a.test, out.test);
  return out;
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

nlohmann::ordered_json manifest_body(const CorpusManifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["n_pages"] = m.n_pages;
  j["counts"] = {{"train", m.train_ids.size()}, {"dev", m.dev_ids.size()},
                 {"test", m.test_ids.size()}};
  j["splits"] = {{"train", m.train_ids}, {"dev", m.dev_ids}, {"test", m.test_ids}};
  return j;
}

}  // namespace

std::string CorpusManifest::to_json() const {
  auto j = manifest_body(*this);
  j["hash"] = hash;
  return j.dump(2);
}

CorpusManifest generate_corpus(const GenConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  CorpusManifest m;
  m.seed = config.seed;
  m.n_pages = config.n_pages;
  if (config.n_pages == 0) {
    m.hash = fnv1a_hex(manifest_body(m).dump());
    return m;
  }

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "html", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "html").string() + ": " + ec.message());

  const SplitAssignment a = assign_splits(config.n_pages, config.seed);
  const auto emit = [&](const std::vector<std::size_t>& idx, std::vector<std::string>& ids,
                        const fs::path& jsonl) {
    std::vector<PageRecord> records;
    for (std::size_t i : idx) {
      GeneratedPage page = generate_page(config.seed, i, config);
      const fs::path html_path = out_dir / "html" / (page.gold.page_id + ".html");
      std::ofstream out(html_path, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + html_path.string());
      out << page.html;
      ids.push_back(page.gold.page_id);
      records.push_back(std::move(page.gold));
    }
    write_records(records, jsonl);
  };
  emit(a.train, m.train_ids, out_dir / "train.jsonl");
  emit(a.dev, m.dev_ids, out_dir / "dev.jsonl");
  emit(a.test, m.test_ids, out_dir / "test.jsonl");

  m.hash = fnv1a_hex(manifest_body(m).dump());
  const fs::path manifest_path = out_dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  out << m.to_json() << '\n';
  return m;
}

}  // namespace heed
