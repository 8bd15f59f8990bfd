#include "nhic/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace nhic {

Dop853::Dop853(int dim, Rhs f, const Tolerances& tol)
    : n_(dim), f_(std::move(f)), tol_(tol), w_(dim), wold_(dim), ww1_(dim), k1_(dim), k2_(dim),
      k3_(dim), k4_(dim), k5_(dim), k6_(dim), k7_(dim), k8_(dim), k9_(dim), k10_(dim),
      rc_(8 * dim) {}

void Dop853::start(double t0, const double* y0, double t_end) {
    t_ = told_ = t0;
    tend_ = t_end;
    posneg_ = t_end >= t0 ? 1.0 : -1.0;
    std::copy(y0, y0 + n_, w_.begin());
    wold_ = w_;
    facold_ = 1e-4;
    reject_ = false;
    nstep_ = naccpt_ = 0;
    done_ = (t_end == t0);
    hlast_ = 0.0;
    if (done_) return;
    f_(t_, w_.data(), k1_.data());
    h_ = hinit();
}

double Dop853::hinit() {
    const double hmax = std::min(std::abs(tend_ - t_), tol_.h_max);
    double dnf = 0, dny = 0, der2 = 0;
    for (int i = 0; i < n_; ++i) {
        double sk = tol_.atol + tol_.rtol * std::abs(w_[i]);
        dnf += (k1_[i] / sk) * (k1_[i] / sk);
        dny += (w_[i] / sk) * (w_[i] / sk);
    }
    double h = std::min((dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01, hmax) *
               posneg_;
    for (int i = 0; i < n_; ++i) ww1_[i] = w_[i] + h * k1_[i];
    f_(t_ + h, ww1_.data(), k2_.data());
    for (int i = 0; i < n_; ++i) {
        double sqr = (k2_[i] - k1_[i]) / (tol_.atol + tol_.rtol * std::abs(w_[i]));
        der2 += sqr * sqr;
    }
    der2 = std::sqrt(der2) / std::abs(h);
    double der12 = std::max(std::abs(der2), std::sqrt(dnf));
    double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 0.125);
    return std::min(100.0 * std::abs(h), std::min(h1, hmax)) * posneg_;
}

void Dop853::step12() {
    const double c2 = 0.526001519587677318785587544488E-01, c3 = 0.789002279381515978178381316732E-01,
                 c4 = 0.118350341907227396726757197510E+00, c5 = 0.281649658092772603273242802490E+00,
                 c6 = 0.333333333333333333333333333333E+00, c7 = 0.25E+00,
                 c8 = 0.307692307692307692307692307692E+00, c9 = 0.651282051282051282051282051282E+00,
                 c10 = 0.6E+00, c11 = 0.857142857142857142857142857142E+00;
    const double b1 = 5.42937341165687622380535766363E-2, b6 = 4.45031289275240888144113950566E0,
                 b7 = 1.89151789931450038304281599044E0, b8 = -5.8012039600105847814672114227E0,
                 b9 = 3.1116436695781989440891606237E-1, b10 = -1.52160949662516078556178806805E-1,
                 b11 = 2.01365400804030348374776537501E-1, b12 = 4.47106157277725905176885569043E-2;
    const double a21 = 5.26001519587677318785587544488E-2, a31 = 1.97250569845378994544595329183E-2,
                 a32 = 5.91751709536136983633785987549E-2, a41 = 2.95875854768068491816892993775E-2,
                 a43 = 8.87627564304205475450678981324E-2, a51 = 2.41365134159266685502369798665E-1,
                 a53 = -8.84549479328286085344864962717E-1, a54 = 9.24834003261792003115737966543E-1,
                 a61 = 3.7037037037037037037037037037E-2, a64 = 1.70828608729473871279604482173E-1,
                 a65 = 1.25467687566822425016691814123E-1, a71 = 3.7109375E-2,
                 a74 = 1.70252211019544039314978060272E-1, a75 = 6.02165389804559606850219397283E-2,
                 a76 = -1.7578125E-2;
    const double a81 = 3.70920001185047927108779319836E-2, a84 = 1.70383925712239993810214054705E-1,
                 a85 = 1.07262030446373284651809199168E-1, a86 = -1.53194377486244017527936158236E-2,
                 a87 = 8.27378916381402288758473766002E-3, a91 = 6.24110958716075717114429577812E-1,
                 a94 = -3.36089262944694129406857109825E0, a95 = -8.68219346841726006818189891453E-1,
                 a96 = 2.75920996994467083049415600797E1, a97 = 2.01540675504778934086186788979E1,
                 a98 = -4.34898841810699588477366255144E1, a101 = 4.77662536438264365890433908527E-1,
                 a104 = -2.48811461997166764192642586468E0, a105 = -5.90290826836842996371446475743E-1,
                 a106 = 2.12300514481811942347288949897E1, a107 = 1.52792336328824235832596922938E1,
                 a108 = -3.32882109689848629194453265587E1, a109 = -2.03312017085086261358222928593E-2;
    const double a111 = -9.3714243008598732571704021658E-1, a114 = 5.18637242884406370830023853209E0,
                 a115 = 1.09143734899672957818500254654E0, a116 = -8.14978701074692612513997267357E0,
                 a117 = -1.85200656599969598641566180701E1, a118 = 2.27394870993505042818970056734E1,
                 a119 = 2.49360555267965238987089396762E0, a1110 = -3.0467644718982195003823669022E0,
                 a121 = 2.27331014751653820792359768449E0, a124 = -1.05344954667372501984066689879E1,
                 a125 = -2.00087205822486249909675718444E0, a126 = -1.79589318631187989172765950534E1,
                 a127 = 2.79488845294199600508499808837E1, a128 = -2.85899827713502369474065508674E0,
                 a129 = -8.87285693353062954433549289258E0, a1210 = 1.23605671757943030647266201528E1,
                 a1211 = 6.43392746015763530355970484046E-1;
    const int n = n_;
    const double h = h_, t = t_;
    double *w = w_.data(), *ww1 = ww1_.data(), *k1 = k1_.data(), *k2 = k2_.data(), *k3 = k3_.data(),
           *k4 = k4_.data(), *k5 = k5_.data(), *k6 = k6_.data(), *k7 = k7_.data(), *k8 = k8_.data(),
           *k9 = k9_.data(), *k10 = k10_.data();
    for (int i = 0; i < n; i++) ww1[i] = w[i] + h * a21 * k1[i];
    f_(t + c2 * h, ww1, k2);
    for (int i = 0; i < n; i++) ww1[i] = w[i] + h * (a31 * k1[i] + a32 * k2[i]);
    f_(t + c3 * h, ww1, k3);
    for (int i = 0; i < n; i++) ww1[i] = w[i] + h * (a41 * k1[i] + a43 * k3[i]);
    f_(t + c4 * h, ww1, k4);
    for (int i = 0; i < n; i++) ww1[i] = w[i] + h * (a51 * k1[i] + a53 * k3[i] + a54 * k4[i]);
    f_(t + c5 * h, ww1, k5);
    for (int i = 0; i < n; i++) ww1[i] = w[i] + h * (a61 * k1[i] + a64 * k4[i] + a65 * k5[i]);
    f_(t + c6 * h, ww1, k6);
    for (int i = 0; i < n; i++) ww1[i] = w[i] + h * (a71 * k1[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    f_(t + c7 * h, ww1, k7);
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a81 * k1[i] + a84 * k4[i] + a85 * k5[i] + a86 * k6[i] + a87 * k7[i]);
    f_(t + c8 * h, ww1, k8);
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a91 * k1[i] + a94 * k4[i] + a95 * k5[i] + a96 * k6[i] + a97 * k7[i] +
                             a98 * k8[i]);
    f_(t + c9 * h, ww1, k9);
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a101 * k1[i] + a104 * k4[i] + a105 * k5[i] + a106 * k6[i] + a107 * k7[i] +
                             a108 * k8[i] + a109 * k9[i]);
    f_(t + c10 * h, ww1, k10);
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a111 * k1[i] + a114 * k4[i] + a115 * k5[i] + a116 * k6[i] + a117 * k7[i] +
                             a118 * k8[i] + a119 * k9[i] + a1110 * k10[i]);
    f_(t + c11 * h, ww1, k2);
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a121 * k1[i] + a124 * k4[i] + a125 * k5[i] + a126 * k6[i] + a127 * k7[i] +
                             a128 * k8[i] + a129 * k9[i] + a1210 * k10[i] + a1211 * k2[i]);
    f_(t + h, ww1, k3);
    for (int i = 0; i < n; i++) {
        k4[i] = b1 * k1[i] + b6 * k6[i] + b7 * k7[i] + b8 * k8[i] + b9 * k9[i] + b10 * k10[i] +
                b11 * k2[i] + b12 * k3[i];
        k5[i] = w[i] + h * k4[i];
    }
}

double Dop853::error_estimation() {
    const double bhh1 = 0.244094488188976377952755905512E+00, bhh2 = 0.733846688281611857341361741547E+00,
                 bhh3 = 0.220588235294117647058823529412E-01, er1 = 0.1312004499419488073250102996E-01,
                 er6 = -0.1225156446376204440720569753E+01, er7 = -0.4957589496572501915214079952E+00,
                 er8 = 0.1664377182454986536961530415E+01, er9 = -0.3503288487499736816886487290E+00,
                 er10 = 0.3341791187130174790297318841E+00, er11 = 0.8192320648511571246570742613E-01,
                 er12 = -0.2235530786388629525884427845E-01;
    double err = 0.0, err2 = 0.0;
    for (int i = 0; i < n_; i++) {
        double sk = 1.0 / (tol_.atol + tol_.rtol * std::max(std::abs(w_[i]), std::abs(k5_[i])));
        double sqr = (k4_[i] - bhh1 * k1_[i] - bhh2 * k9_[i] - bhh3 * k3_[i]) * sk;
        err2 += sqr * sqr;
        sqr = (er1 * k1_[i] + er6 * k6_[i] + er7 * k7_[i] + er8 * k8_[i] + er9 * k9_[i] +
               er10 * k10_[i] + er11 * k2_[i] + er12 * k3_[i]) *
              sk;
        err += sqr * sqr;
    }
    double deno = err + 0.01 * err2;
    return err * std::sqrt(1.0 / (deno <= 0.0 ? n_ : deno * n_));
}

void Dop853::prepare_dense() {
    const double c14 = 0.1E+00, c15 = 0.2E+00, c16 = 0.777777777777777777777777777778E+00;
    const double a141 = 5.61675022830479523392909219681E-2, a147 = 2.53500210216624811088794765333E-1,
                 a148 = -2.46239037470802489917441475441E-1, a149 = -1.24191423263816360469010140626E-1,
                 a1410 = 1.5329179827876569731206322685E-1, a1411 = 8.20105229563468988491666602057E-3,
                 a1412 = 7.56789766054569976138603589584E-3, a1413 = -8.298E-3;
    const double a151 = 3.18346481635021405060768473261E-2, a156 = 2.83009096723667755288322961402E-2,
                 a157 = 5.35419883074385676223797384372E-2, a158 = -5.49237485713909884646569340306E-2,
                 a1511 = -1.08347328697249322858509316994E-4, a1512 = 3.82571090835658412954920192323E-4,
                 a1513 = -3.40465008687404560802977114492E-4, a1514 = 1.41312443674632500278074618366E-1;
    const double a161 = -4.28896301583791923408573538692E-1, a166 = -4.69762141536116384314449447206E0,
                 a167 = 7.68342119606259904184240953878E0, a168 = 4.06898981839711007970213554331E0,
                 a169 = 3.56727187455281109270669543021E-1, a1613 = -1.39902416515901462129418009734E-3,
                 a1614 = 2.9475147891527723389556272149E0, a1615 = -9.15095847217987001081870187138E0;
    const double d41 = -0.84289382761090128651353491142E+01, d46 = 0.56671495351937776962531783590E+00,
                 d47 = -0.30689499459498916912797304727E+01, d48 = 0.23846676565120698287728149680E+01,
                 d49 = 0.21170345824450282767155149946E+01, d410 = -0.87139158377797299206789907490E+00,
                 d411 = 0.22404374302607882758541771650E+01, d412 = 0.63157877876946881815570249290E+00,
                 d413 = -0.88990336451333310820698117400E-01, d414 = 0.18148505520854727256656404962E+02,
                 d415 = -0.91946323924783554000451984436E+01, d416 = -0.44360363875948939664310572000E+01;
    const double d51 = 0.10427508642579134603413151009E+02, d56 = 0.24228349177525818288430175319E+03,
                 d57 = 0.16520045171727028198505394887E+03, d58 = -0.37454675472269020279518312152E+03,
                 d59 = -0.22113666853125306036270938578E+02, d510 = 0.77334326684722638389603898808E+01,
                 d511 = -0.30674084731089398182061213626E+02, d512 = -0.93321305264302278729567221706E+01,
                 d513 = 0.15697238121770843886131091075E+02, d514 = -0.31139403219565177677282850411E+02,
                 d515 = -0.93529243588444783865713862664E+01, d516 = 0.35816841486394083752465898540E+02;
    const double d61 = 0.19985053242002433820987653617E+02, d66 = -0.38703730874935176555105901742E+03,
                 d67 = -0.18917813819516756882830838328E+03, d68 = 0.52780815920542364900561016686E+03,
                 d69 = -0.11573902539959630126141871134E+02, d610 = 0.68812326946963000169666922661E+01,
                 d611 = -0.10006050966910838403183860980E+01, d612 = 0.77771377980534432092869265740E+00,
                 d613 = -0.27782057523535084065932004339E+01, d614 = -0.60196695231264120758267380846E+02,
                 d615 = 0.84320405506677161018159903784E+02, d616 = 0.11992291136182789328035130030E+02;
    const double d71 = -0.25693933462703749003312586129E+02, d76 = -0.15418974869023643374053993627E+03,
                 d77 = -0.23152937917604549567536039109E+03, d78 = 0.35763911791061412378285349910E+03,
                 d79 = 0.93405324183624310003907691704E+02, d710 = -0.37458323136451633156875139351E+02,
                 d711 = 0.10409964950896230045147246184E+03, d712 = 0.29840293426660503123344363579E+02,
                 d713 = -0.43533456590011143754432175058E+02, d714 = 0.96324553959188282948394950600E+02,
                 d715 = -0.39177261675615439165231486172E+02, d716 = -0.14972683625798562581422125276E+03;
    const int n = n_;
    const double h = h_, t = t_;
    double *w = w_.data(), *ww1 = ww1_.data(), *k1 = k1_.data(), *k2 = k2_.data(), *k3 = k3_.data(),
           *k4 = k4_.data(), *k5 = k5_.data(), *k6 = k6_.data(), *k7 = k7_.data(), *k8 = k8_.data(),
           *k9 = k9_.data(), *k10 = k10_.data();
    double *rc1 = rc_.data(), *rc2 = rc1 + n, *rc3 = rc2 + n, *rc4 = rc3 + n, *rc5 = rc4 + n,
           *rc6 = rc5 + n, *rc7 = rc6 + n, *rc8 = rc7 + n;
    for (int i = 0; i < n; i++) {
        rc1[i] = w[i];
        double ydiff = k5[i] - w[i];
        rc2[i] = ydiff;
        double bspl = h * k1[i] - ydiff;
        rc3[i] = bspl;
        rc4[i] = ydiff - h * k4[i] - bspl;
        rc5[i] = d41 * k1[i] + d46 * k6[i] + d47 * k7[i] + d48 * k8[i] + d49 * k9[i] + d410 * k10[i] +
                 d411 * k2[i] + d412 * k3[i];
        rc6[i] = d51 * k1[i] + d56 * k6[i] + d57 * k7[i] + d58 * k8[i] + d59 * k9[i] + d510 * k10[i] +
                 d511 * k2[i] + d512 * k3[i];
        rc7[i] = d61 * k1[i] + d66 * k6[i] + d67 * k7[i] + d68 * k8[i] + d69 * k9[i] + d610 * k10[i] +
                 d611 * k2[i] + d612 * k3[i];
        rc8[i] = d71 * k1[i] + d76 * k6[i] + d77 * k7[i] + d78 * k8[i] + d79 * k9[i] + d710 * k10[i] +
                 d711 * k2[i] + d712 * k3[i];
    }
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a141 * k1[i] + a147 * k7[i] + a148 * k8[i] + a149 * k9[i] + a1410 * k10[i] +
                             a1411 * k2[i] + a1412 * k3[i] + a1413 * k4[i]);
    f_(t + c14 * h, ww1, k10);
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a151 * k1[i] + a156 * k6[i] + a157 * k7[i] + a158 * k8[i] + a1511 * k2[i] +
                             a1512 * k3[i] + a1513 * k4[i] + a1514 * k10[i]);
    f_(t + c15 * h, ww1, k2);
    for (int i = 0; i < n; i++)
        ww1[i] = w[i] + h * (a161 * k1[i] + a166 * k6[i] + a167 * k7[i] + a168 * k8[i] + a169 * k9[i] +
                             a1613 * k4[i] + a1614 * k10[i] + a1615 * k2[i]);
    f_(t + c16 * h, ww1, k3);
    for (int i = 0; i < n; i++) {
        rc5[i] = h * (rc5[i] + d413 * k4[i] + d414 * k10[i] + d415 * k2[i] + d416 * k3[i]);
        rc6[i] = h * (rc6[i] + d513 * k4[i] + d514 * k10[i] + d515 * k2[i] + d516 * k3[i]);
        rc7[i] = h * (rc7[i] + d613 * k4[i] + d614 * k10[i] + d615 * k2[i] + d616 * k3[i]);
        rc8[i] = h * (rc8[i] + d713 * k4[i] + d714 * k10[i] + d715 * k2[i] + d716 * k3[i]);
    }
}

bool Dop853::step() {
    if (done_) return false;
    const double uround = 2.3e-16, safe = 0.9, facc1 = 3.0, facc2 = 1.0 / 6.0, expo1 = 1.0 / 8.0;
    const double hmax = std::min(std::abs(tend_ - t_), tol_.h_max);
    (void)hmax;
    while (true) {
        if (nstep_ > tol_.max_steps) throw Error("StepSizeUnderflow", "step budget exhausted");
        if (0.1 * std::abs(h_) <= std::abs(t_) * uround || h_ == 0.0)
            throw Error("StepSizeUnderflow", "step size below roundoff at t=" + std::to_string(t_));
        bool last = false;
        if ((t_ + 1.01 * h_ - tend_) * posneg_ > 0.0) {
            h_ = tend_ - t_;
            last = true;
        }
        ++nstep_;
        step12();
        double err = std::abs(h_) * error_estimation();
        double fac11 = std::pow(err, expo1);
        double fac = std::max(facc2, std::min(facc1, fac11 / safe));
        double hnew = h_ / fac;
        if (!std::isfinite(err)) {
            h_ *= 0.1;
            reject_ = true;
            continue;
        }
        if (err <= 1.0) {
            facold_ = std::max(err, 1e-4);
            ++naccpt_;
            f_(t_ + h_, k5_.data(), k4_.data());
            prepare_dense();
            k1_ = k4_;
            wold_ = w_;
            w_ = k5_;
            told_ = t_;
            t_ = last ? tend_ : t_ + h_;
            hlast_ = h_;
            if (last) done_ = true;
            if (std::abs(hnew) > tol_.h_max) hnew = posneg_ * tol_.h_max;
            if (reject_) hnew = posneg_ * std::min(std::abs(hnew), std::abs(h_));
            reject_ = false;
            h_ = hnew;
            return true;
        }
        hnew = h_ / std::min(facc1, fac11 / safe);
        reject_ = true;
        h_ = hnew;
    }
}

void Dop853::dense(double ti, double* out) const {
    const int n = n_;
    const double* rc = rc_.data();
    double s = hlast_ == 0.0 ? 0.0 : (ti - told_) / hlast_, s1 = 1.0 - s;
    for (int i = 0; i < n; i++)
        out[i] = rc[i] + s * (rc[n + i] + s1 * (rc[2 * n + i] + s * (rc[3 * n + i] + s1 * (rc[4 * n + i] +
                 s * (rc[5 * n + i] + s1 * (rc[6 * n + i] + s * rc[7 * n + i]))))));
}

double dense_eval_component(const DenseStep& st, int n, int i, double ti) {
    const double* rc = st.rc.data();
    double s = st.h == 0.0 ? 0.0 : (ti - st.t0) / st.h, s1 = 1.0 - s;
    return rc[i] + s * (rc[n + i] + s1 * (rc[2 * n + i] + s * (rc[3 * n + i] + s1 * (rc[4 * n + i] +
           s * (rc[5 * n + i] + s1 * (rc[6 * n + i] + s * rc[7 * n + i]))))));
}

void dense_eval(const DenseStep& st, int n, double ti, double* out) {
    for (int i = 0; i < n; ++i) out[i] = dense_eval_component(st, n, i, ti);
}

namespace {

int locate_step(const std::vector<DenseStep>& steps, double t) {
    if (steps.empty()) return -1;
    const double dir = steps.front().h >= 0 ? 1.0 : -1.0;
    int lo = 0, hi = static_cast<int>(steps.size()) - 1;
    while (lo < hi) {
        int mid = (lo + hi + 1) / 2;
        if ((t - steps[mid].t0) * dir >= 0) lo = mid;
        else hi = mid - 1;
    }
    return lo;
}

}  // namespace

Vec OrbitSegment::at(double t) const {
    if (steps.empty()) return states.front();
    int k = locate_step(steps, t);
    Vec out(dense_dim);
    dense_eval(steps[k], dense_dim, t, out.data());
    return out.head(2 * n);
}

double OrbitSegment::max_energy_error(const HamiltonianModel& m) const {
    double e = 0.0;
    for (const auto& s : states) e = std::max(e, std::abs(m.H(s) - energy));
    return e;
}

Mat VariationalSegment::at(double t) const {
    const int d = 2 * base.n;
    if (base.steps.empty()) return fundamental.front();
    int k = locate_step(base.steps, t);
    Vec out(base.dense_dim);
    dense_eval(base.steps[k], base.dense_dim, t, out.data());
    return Eigen::Map<Mat>(out.data() + d, d, d);
}

EventSpec plane_event(int component, double level, Direction dir, const std::string& name) {
    EventSpec e;
    e.name = name;
    e.g = [component, level](const Vec& z) { return z[component] - level; };
    e.grad = [component](const Vec& z) {
        Vec g = Vec::Zero(z.size());
        g[component] = 1.0;
        return g;
    };
    e.direction = dir;
    return e;
}

namespace {

Dop853::Rhs make_rhs(const HamiltonianModel& model, bool variational, double gamma, bool gcol) {
    const int d = 2 * model.n();
    return [&model, variational, gamma, gcol, d](double, const double* y, double* dy) {
        if (!variational && gamma == 0.0) {
            model.field_and_jacobian(y, dy, nullptr, nullptr, nullptr);
            return;
        }
        Mat DX, HH;
        Vec gH;
        model.field_and_jacobian(y, dy, variational ? &DX : nullptr, &gH, (gamma != 0.0) ? &HH : nullptr);
        if (gamma != 0.0) {
            for (int i = 0; i < d; ++i) dy[i] += gamma * gH[i];
            if (variational) DX += gamma * HH;
        }
        if (variational) {
            Eigen::Map<const Mat> Psi(y + d, d, d);
            Eigen::Map<Mat> dPsi(dy + d, d, d);
            dPsi.noalias() = DX * Psi;
            if (gcol) {
                Eigen::Map<const Vec> w(y + d + d * d, d);
                Eigen::Map<Vec> dw(dy + d + d * d, d);
                dw.noalias() = DX * w + gH;
            }
        }
    };
}

void check_blowup(const double* y, int d, double bound, double t) {
    for (int i = 0; i < d; ++i) {
        if (!std::isfinite(y[i]) || std::abs(y[i]) > bound)
            throw Error("BlowUp", "state exceeds bound at t=" + std::to_string(t));
    }
}

bool sign_ok(double a, double b, Direction dir) {
    if (!(std::isfinite(a) && std::isfinite(b))) return false;
    if (a == 0.0) return false;
    bool cross = (a < 0 && b >= 0) || (a > 0 && b <= 0);
    if (!cross) return false;
    if (dir == Direction::Increasing) return a < 0;
    if (dir == Direction::Decreasing) return a > 0;
    return true;
}

}  // namespace

OrbitSegment integrate(const HamiltonianModel& model, const Vec& z0, double t0, double t1,
                       const Tolerances& tol) {
    const int d = 2 * model.n();
    Dop853 s(d, make_rhs(model, false, 0.0, false), tol);
    OrbitSegment seg;
    seg.n = model.n();
    seg.dense_dim = d;
    seg.energy = model.H(z0);
    seg.times.push_back(t0);
    seg.states.push_back(z0);
    s.start(t0, z0.data(), t1);
    while (s.step()) {
        check_blowup(s.y(), d, tol.blowup, s.t());
        seg.times.push_back(s.t());
        seg.states.emplace_back(Eigen::Map<const Vec>(s.y(), d));
        seg.steps.push_back({s.t_old(), s.h(), s.dense_coefficients()});
    }
    return seg;
}

VariationalSegment integrate_variational(const HamiltonianModel& model, const Vec& z0, double t0,
                                         double t1, const Tolerances& tol) {
    const int d = 2 * model.n();
    const int D = d + d * d;
    Dop853 s(D, make_rhs(model, true, 0.0, false), tol);
    Vec y0(D);
    y0.head(d) = z0;
    Eigen::Map<Mat>(y0.data() + d, d, d).setIdentity();
    VariationalSegment vs;
    vs.base.n = model.n();
    vs.base.dense_dim = D;
    vs.base.energy = model.H(z0);
    vs.base.times.push_back(t0);
    vs.base.states.push_back(z0);
    vs.fundamental.push_back(Mat::Identity(d, d));
    s.start(t0, y0.data(), t1);
    while (s.step()) {
        check_blowup(s.y(), d, tol.blowup, s.t());
        vs.base.times.push_back(s.t());
        vs.base.states.emplace_back(Eigen::Map<const Vec>(s.y(), d));
        vs.fundamental.emplace_back(Eigen::Map<const Mat>(s.y() + d, d, d));
        vs.base.steps.push_back({s.t_old(), s.h(), s.dense_coefficients()});
    }
    return vs;
}

EventRun integrate_events(const HamiltonianModel& model, const Vec& z0, double t_max,
                          const std::vector<EventSpec>& events, const Tolerances& tol,
                          const RunOptions& opt) {
    const int d = 2 * model.n();
    const int D = opt.variational ? d + d * d : d;
    Dop853 s(D, make_rhs(model, opt.variational, 0.0, false), tol);
    Vec y0(D);
    y0.head(d) = z0;
    if (opt.variational) Eigen::Map<Mat>(y0.data() + d, d, d).setIdentity();

    EventRun run;
    run.segment.n = model.n();
    run.segment.dense_dim = D;
    run.segment.energy = model.H(z0);
    run.segment.times.push_back(0.0);
    run.segment.states.push_back(z0);
    if (opt.variational) run.fundamental.push_back(Mat::Identity(d, d));

    const std::size_t ne = events.size();
    std::vector<double> gprev(ne);
    std::vector<bool> armed(ne);
    for (std::size_t i = 0; i < ne; ++i) {
        gprev[i] = events[i].g(z0);
        armed[i] = !(std::isfinite(gprev[i]) && std::abs(gprev[i]) < 1e-9);
    }
    s.start(0.0, y0.data(), t_max);
    Vec zbuf(D), ztmp(d);
    auto zdense = [&](double t) {
        s.dense(t, zbuf.data());
        return Vec(zbuf.head(d));
    };
    while (s.step()) {
        check_blowup(s.y(), d, tol.blowup, s.t());
        Vec z = Eigen::Map<const Vec>(s.y(), d);
        if (opt.keep_dense) run.segment.steps.push_back({s.t_old(), s.h(), s.dense_coefficients()});
        if (opt.observer && !opt.observer(s.t(), z))
            throw Error(opt.observer_error, "observer rejected state at t=" + std::to_string(s.t()));

        int best = -1;
        double tbest = 0.0;
        std::vector<std::pair<int, double>> found;
        for (std::size_t i = 0; i < ne; ++i) {
            double gi = events[i].g(z);
            if (!armed[i]) {
                if (std::isfinite(gi) && std::abs(gi) >= 1e-9) armed[i] = true;
                gprev[i] = gi;
                continue;
            }
            if (sign_ok(gprev[i], gi, events[i].direction)) {
                double a = s.t_old(), b = s.t();
                double ga = gprev[i];
                for (int it = 0; it < 200 && std::abs(b - a) > 1e-13 * std::max(1.0, std::abs(b)); ++it) {
                    double m = 0.5 * (a + b);
                    double gm = events[i].g(zdense(m));
                    if (!std::isfinite(gm)) break;
                    if ((ga < 0) == (gm < 0)) {
                        a = m;
                        ga = gm;
                    } else {
                        b = m;
                    }
                }
                double th = 0.5 * (a + b);
                if (events[i].grad) {
                    Vec zh = zdense(th);
                    double gd = events[i].grad(zh).dot(model.field(zh));
                    if (gd != 0.0) {
                        double tn = th - events[i].g(zh) / gd;
                        double lo = std::min(s.t_old(), s.t()), hi = std::max(s.t_old(), s.t());
                        if (tn >= lo && tn <= hi) {
                            double gn = events[i].g(zdense(tn));
                            if (std::abs(gn) <= std::abs(events[i].g(zh))) th = tn;
                        }
                    }
                }
                found.emplace_back(static_cast<int>(i), th);
            }
            gprev[i] = gi;
        }
        for (auto& [i, th] : found) {
            if (!events[i].terminal) {
                EventHit h;
                h.event_index = i;
                h.t = th;
                h.z = zdense(th);
                run.nonterminal_hits.push_back(h);
                continue;
            }
            if (best < 0 || (th - tbest) * (t_max >= 0 ? 1 : -1) < 0) {
                best = i;
                tbest = th;
            }
        }
        if (best >= 0) {
            EventHit h;
            h.event_index = best;
            h.t = tbest;
            s.dense(tbest, zbuf.data());
            h.z = zbuf.head(d);
            if (opt.variational) h.Psi = Eigen::Map<Mat>(zbuf.data() + d, d, d);
            Vec X = model.field(h.z);
            if (events[best].grad) {
                h.g_dot = events[best].grad(h.z).dot(X);
            } else {
                double dt = 1e-7 * std::max(1.0, std::abs(s.h()));
                h.g_dot = (events[best].g(zdense(tbest + dt)) - events[best].g(zdense(tbest - dt))) / (2 * dt);
            }
            if (std::abs(h.g_dot) < 1e-10)
                throw Error("TangentialCrossing", "event '" + events[best].name + "' grazed");
            // remove non-terminal hits after the terminal one
            std::erase_if(run.nonterminal_hits, [&](const EventHit& e) {
                return (e.t - tbest) * (t_max >= 0 ? 1 : -1) > 0;
            });
            run.segment.times.push_back(tbest);
            run.segment.states.push_back(h.z);
            if (opt.variational) run.fundamental.push_back(h.Psi);
            run.hit = h;
            return run;
        }
        run.segment.times.push_back(s.t());
        run.segment.states.push_back(z);
        if (opt.variational) run.fundamental.emplace_back(Eigen::Map<const Mat>(s.y() + d, d, d));
    }
    return run;
}

EventRun integrate_to_event(const HamiltonianModel& model, const Vec& z0, const EventSpec& ev,
                            double t_max, const Tolerances& tol, bool variational) {
    RunOptions opt;
    opt.variational = variational;
    EventRun r = integrate_events(model, z0, t_max, {ev}, tol, opt);
    if (!r.hit) throw Error("EventNotReached", "event '" + ev.name + "' not reached by t_max");
    return r;
}

Propagation propagate(const HamiltonianModel& model, const Vec& z0, double h, double gamma,
                      bool jacobian, const Tolerances& tol) {
    const int d = 2 * model.n();
    const int D = jacobian ? d + d * d + d : d;
    Dop853 s(D, make_rhs(model, jacobian, gamma, jacobian), tol);
    Vec y0 = Vec::Zero(D);
    y0.head(d) = z0;
    if (jacobian) Eigen::Map<Mat>(y0.data() + d, d, d).setIdentity();
    s.start(0.0, y0.data(), h);
    Propagation p;
    while (s.step()) check_blowup(s.y(), d, tol.blowup, s.t());
    Eigen::Map<const Vec> y(s.y(), D);
    p.z = y.head(d);
    p.steps = s.steps();
    if (jacobian) {
        p.Psi = Eigen::Map<const Mat>(s.y() + d, d, d);
        p.dgamma = y.segment(d + d * d, d);
    }
    p.field_end = model.field(p.z);
    if (gamma != 0.0) p.field_end += gamma * model.gradH(p.z);
    return p;
}

void write_segment_csv(const OrbitSegment& seg, const HamiltonianModel& model, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("IOError", "cannot write " + path);
    const int n = seg.n;
    f << "t";
    for (int i = 0; i < n; ++i) f << ",x" << i + 1;
    for (int i = 0; i < n; ++i) f << ",y" << i + 1;
    f << ",H\n";
    f << std::setprecision(17);
    for (std::size_t k = 0; k < seg.times.size(); ++k) {
        f << seg.times[k];
        for (int i = 0; i < 2 * n; ++i) f << "," << seg.states[k][i];
        f << "," << model.H(seg.states[k]) << "\n";
    }
}

}  // namespace nhic
