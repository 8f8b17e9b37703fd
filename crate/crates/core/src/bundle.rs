//! Trivialized bundle charts, horizontal shadows and the shadow
//! decomposition of exterior derivatives.
//!
//! Coordinates `0..n` are horizontal (base) and `n..n+k` vertical (fibre).
//! A multi-index is ascending, so its horizontal entries form a prefix whose
//! length is the split position ⋆.

use num_rational::BigRational;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Coefficient, CoordBox};
use crate::form::Form;
use crate::metric::MetricField;
use crate::multi_index::{binomial, MultiIndex};
use crate::poly::rational_from_f64;
use crate::pullback::Diffeomorphism;

/// A trivializing chart of a bundle with base dimension `n` and fibre
/// dimension `k`.
#[derive(Clone, Debug)]
pub struct BundleChart {
    pub n: usize,
    pub k: usize,
    pub metric: MetricField,
    pub bounds: CoordBox,
    pub phi: Option<Diffeomorphism>,
}

impl BundleChart {
    pub fn new(n: usize, k: usize, metric: MetricField, bounds: CoordBox) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidProblem(format!("bundle chart needs n >= 1 and k >= 1, got n={}, k={}", n, k)));
        }
        if metric.dim() != n + k || bounds.dim() != n + k {
            return Err(Error::DimensionMismatch(format!(
                "chart of dimension {} with metric of dimension {} and box of dimension {}",
                n + k,
                metric.dim(),
                bounds.dim()
            )));
        }
        Ok(BundleChart { n, k, metric, bounds, phi: None })
    }

    pub fn with_phi(mut self, phi: Diffeomorphism) -> Result<Self> {
        if phi.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "diffeomorphism of dimension {} on a chart of dimension {}",
                phi.dim(),
                self.dim()
            )));
        }
        self.phi = Some(phi);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.n + self.k
    }

    pub fn is_horizontal(&self, i: usize) -> bool {
        i < self.n
    }

    pub fn decompose<C: Coefficient>(&self, xi: &Form<C>) -> Result<ShadowData<C>> {
        if xi.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "form on a chart of dimension {}, bundle chart has dimension {}",
                xi.dim(),
                self.dim()
            )));
        }
        shadow_decompose(xi, self.n)
    }
}

/// A box with a star center. The center is kept as an exact rational so the
/// polynomial homotopy operator stays exact.
#[derive(Clone, Debug, PartialEq)]
pub struct StarDomain {
    bounds: CoordBox,
    center: Vec<BigRational>,
}

impl StarDomain {
    pub fn new(bounds: CoordBox, center: &[f64]) -> Result<Self> {
        if center.len() != bounds.dim() {
            return Err(Error::DimensionMismatch(format!(
                "center has {} coordinates, box has dimension {}",
                center.len(),
                bounds.dim()
            )));
        }
        if !bounds.contains_interior(center) {
            return Err(Error::InvalidProblem(format!("star center {:?} is not interior to the box", center)));
        }
        let center = center
            .iter()
            .map(|&c| rational_from_f64(c).ok_or_else(|| Error::InvalidProblem("non-finite star center".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(StarDomain { bounds, center })
    }

    /// The box with its midpoint as center.
    pub fn centered(bounds: CoordBox) -> Self {
        let c = bounds.center();
        StarDomain::new(bounds, &c).expect("midpoint is interior")
    }

    pub fn bounds(&self) -> &CoordBox {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn center(&self) -> Vec<f64> {
        self.center.iter().map(crate::poly::rational_to_f64).collect()
    }

    pub fn center_exact(&self) -> &[BigRational] {
        &self.center
    }

    /// Outward unit covector of the face containing `x` (coordinate-unit,
    /// axis aligned), or `None` if `x` is not within `tol` of a face.
    /// At edges the first matching axis wins.
    pub fn boundary_normal(&self, x: &[f64], tol: f64) -> Option<Vec<f64>> {
        let dim = self.dim();
        for a in 0..dim {
            let side = if (x[a] - self.bounds.lo[a]).abs() <= tol {
                -1.0
            } else if (x[a] - self.bounds.hi[a]).abs() <= tol {
                1.0
            } else {
                continue;
            };
            let mut nu = vec![0.0; dim];
            nu[a] = side;
            return Some(nu);
        }
        None
    }

    /// Points on every face with their outward covectors. Each face carries a
    /// tensor lattice of `per_axis` cell midpoints in its tangential
    /// directions, so no sample sits on an edge.
    pub fn boundary_samples(&self, per_axis: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let dim = self.dim();
        let m = per_axis.max(1);
        let mut out = Vec::new();
        for a in 0..dim {
            for (side, val) in [(-1.0, self.bounds.lo[a]), (1.0, self.bounds.hi[a])] {
                let tangential: Vec<usize> = (0..dim).filter(|&b| b != a).collect();
                let count = m.pow(tangential.len() as u32);
                for flat in 0..count {
                    let mut x = vec![0.0; dim];
                    x[a] = val;
                    let mut rem = flat;
                    for &b in &tangential {
                        let i = rem % m;
                        rem /= m;
                        let s = (i as f64 + 0.5) / m as f64;
                        x[b] = self.bounds.lo[b] + s * self.bounds.side(b);
                    }
                    let mut nu = vec![0.0; dim];
                    nu[a] = side;
                    out.push((x, nu));
                }
            }
        }
        out
    }
}

/// Which term of ξ and which derivative direction produced an entry.
/// `source` is the multi-index of ξ, `star` its horizontal prefix length and
/// `j` the differentiated coordinate (0-based; 1-based when serialized).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Provenance {
    pub source: MultiIndex,
    pub star: usize,
    pub j: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceDoc {
    source: MultiIndex,
    star: usize,
    j: usize,
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ProvenanceDoc { source: self.source.clone(), star: self.star, j: self.j + 1 }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = ProvenanceDoc::deserialize(d)?;
        if doc.j == 0 {
            return Err(serde::de::Error::custom("derivative index j is 1-based"));
        }
        Ok(Provenance { source: doc.source, star: doc.star, j: doc.j - 1 })
    }
}

/// One pair `g ∧ ϑ` of a shadow decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "C: Coefficient + Serialize", deserialize = "C: Coefficient + DeserializeOwned"))]
#[serde(deny_unknown_fields)]
pub struct ShadowEntry<C> {
    pub g: Form<C>,
    pub theta: Form<C>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// `(f; g₁…g_I)` with complementary forms `ϑ¹…ϑ^I`, representing the
/// ℓ-form `f + Σ gᵢ∧ϑⁱ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "C: Coefficient + Serialize", deserialize = "C: Coefficient + DeserializeOwned"))]
#[serde(deny_unknown_fields)]
pub struct ShadowData<C> {
    pub ell: usize,
    pub n: usize,
    pub k: usize,
    pub f: Form<C>,
    pub entries: Vec<ShadowEntry<C>>,
    /// Set when every term of the decomposed form had purely vertical indices.
    #[serde(default)]
    pub purely_vertical: bool,
}

impl<C: Coefficient> ShadowData<C> {
    pub fn dim(&self) -> usize {
        self.n + self.k
    }

    /// Checks chart dimensions and ℓ-complementarity of every entry.
    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if self.f.dim() != dim || self.f.degree() != self.ell {
            return Err(Error::DegreeOutOfRange(format!(
                "f has degree {} on dimension {}, expected degree {} on dimension {}",
                self.f.degree(),
                self.f.dim(),
                self.ell,
                dim
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.g.dim() != dim || e.theta.dim() != dim {
                return Err(Error::DimensionMismatch(format!("entry {} is not on a chart of dimension {}", i + 1, dim)));
            }
            if e.g.degree() + e.theta.degree() != self.ell {
                return Err(Error::DegreeOutOfRange(format!(
                    "entry {}: deg g + deg theta = {} + {} != {}",
                    i + 1,
                    e.g.degree(),
                    e.theta.degree(),
                    self.ell
                )));
            }
        }
        Ok(())
    }

    /// Whether every `g` is horizontal and every `ϑ` vertical, as produced by
    /// [`shadow_decompose`].
    pub fn is_split(&self) -> bool {
        let n = self.n;
        self.entries.iter().all(|e| {
            e.g.terms().keys().all(|i| i.horizontal_prefix_len(n) == i.valency())
                && e.theta.terms().keys().all(|i| i.horizontal_prefix_len(n) == 0)
        })
    }

    /// The horizontal projection of the represented ℓ-form, with entries
    /// merged by full multi-index.
    pub fn canonical_tuple(&self) -> Result<ShadowTuple<C>> {
        self.validate()?;
        if !self.is_split() {
            return Ok(horizontal_projection(&shadow_reconstruct(self)?, self.n));
        }
        let mut tuple = horizontal_projection(&self.f, self.n);
        for e in &self.entries {
            for (h, gc) in e.g.terms() {
                for (v, tc) in e.theta.terms() {
                    // h is horizontal and v vertical, so the join is already sorted.
                    let (full, _) = h.join(v);
                    let full = full.expect("disjoint index blocks");
                    let c = gc.mul(tc);
                    tuple.add_component(full, h.valency(), h.clone(), c);
                }
            }
        }
        tuple.prune();
        Ok(tuple)
    }
}

/// One mixed or vertical component of a horizontal projection: the full
/// ℓ-index, its split position and the horizontal shadow `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowComponent<C> {
    pub index: MultiIndex,
    pub star: usize,
    pub g: Form<C>,
}

/// The horizontal projection `(f; g₁…g_I)` of an ℓ-form, components ordered
/// by full multi-index.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowTuple<C> {
    pub n: usize,
    pub k: usize,
    pub ell: usize,
    pub f: Form<C>,
    pub components: Vec<ShadowComponent<C>>,
}

impl<C: Coefficient> ShadowTuple<C> {
    pub fn empty(n: usize, k: usize, ell: usize) -> Self {
        ShadowTuple { n, k, ell, f: Form::zero(n + k, ell), components: Vec::new() }
    }

    fn add_component(&mut self, full: MultiIndex, star: usize, h: MultiIndex, c: C) {
        let dim = self.n + self.k;
        if star == self.ell {
            self.f.accumulate(full, c).expect("compatible by construction");
            return;
        }
        match self.components.binary_search_by(|p| p.index.cmp(&full)) {
            Ok(pos) => self.components[pos].g.accumulate(h, c).expect("compatible by construction"),
            Err(pos) => {
                let mut g = Form::zero(dim, star);
                g.accumulate(h, c).expect("compatible by construction");
                self.components.insert(pos, ShadowComponent { index: full, star, g });
            }
        }
    }

    fn prune(&mut self) {
        self.components.retain(|c| !c.g.is_zero());
    }

    /// Rebuilds the ℓ-form `f + Σ g ∧ dx^{vertical part}`.
    pub fn reconstruct(&self) -> Form<C> {
        let mut out = self.f.clone();
        for comp in &self.components {
            let (_, v) = comp.index.split_at(comp.star);
            for (h, c) in comp.g.terms() {
                let (full, parity) = h.join(&v);
                if let Some(full) = full {
                    out.accumulate(full, c.signed(parity.sign())).expect("compatible by construction");
                }
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> ShadowTuple<f64> {
        ShadowTuple {
            n: self.n,
            k: self.k,
            ell: self.ell,
            f: self.f.eval(x),
            components: self
                .components
                .iter()
                .map(|c| ShadowComponent { index: c.index.clone(), star: c.star, g: c.g.eval(x) })
                .collect(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }
}

/// Splits an ℓ-form into its purely horizontal part `f` and one horizontal
/// shadow `g = w_I dx^{I₁…I_⋆}` per remaining term. Purely vertical terms
/// give degree-0 shadows (⋆ = 0).
pub fn horizontal_projection<C: Coefficient>(w: &Form<C>, n: usize) -> ShadowTuple<C> {
    let dim = w.dim();
    let ell = w.degree();
    let mut tuple = ShadowTuple::empty(n, dim.saturating_sub(n), ell);
    for (idx, c) in w.terms() {
        let star = idx.horizontal_prefix_len(n);
        let (h, _) = idx.split_at(star);
        tuple.add_component(idx.clone(), star, h, c.clone());
    }
    tuple
}

fn basis_like<C: Coefficient>(proto: &C, dim: usize, idx: MultiIndex, sign: i32) -> Form<C> {
    let deg = idx.valency();
    let mut out = Form::zero(dim, deg);
    out.accumulate(idx, proto.constant_like(sign as f64)).expect("single term");
    out
}

/// Decomposes `d̄ξ` into `f + Σ g∧ϑ` with `f` purely horizontal, each `g`
/// horizontal of degree at most ℓ−1 and each `ϑ` a constant vertical form.
///
/// For a term `ξ_I dx^I` with horizontal prefix `I_h` (length ⋆), vertical
/// rest `I_v`, and `j ∉ I`:
/// * `j` horizontal, `I` purely horizontal: the term goes to `f`;
/// * `j` horizontal: `g = ∂_j ξ_I dx^j ∧ dx^{I_h}`, `ϑ = dx^{I_v}`;
/// * `j` vertical: `g = ∂_j ξ_I dx^{I_h}`, `ϑ = (−1)^⋆ dx^j ∧ dx^{I_v}`.
///
/// Entries are kept unmerged, ordered by (source index, j).
pub fn shadow_decompose<C: Coefficient>(xi: &Form<C>, n: usize) -> Result<ShadowData<C>> {
    let dim = xi.dim();
    if n == 0 || n >= dim {
        return Err(Error::InvalidProblem(format!("split n={} invalid on a chart of dimension {}", n, dim)));
    }
    let ell = xi.degree() + 1;
    if ell > dim {
        return Err(Error::DegreeOutOfRange(format!(
            "form of degree {} has no derivative on a chart of dimension {}",
            xi.degree(),
            dim
        )));
    }
    let mut f = Form::zero(dim, ell);
    let mut entries = Vec::new();
    for (idx, c) in xi.terms() {
        let star = idx.horizontal_prefix_len(n);
        let (ih, iv) = idx.split_at(star);
        for j in 0..dim {
            if idx.contains(j) {
                continue;
            }
            let dc = c.partial(j);
            if dc.is_zero() {
                continue;
            }
            let provenance = Some(Provenance { source: idx.clone(), star, j });
            if j < n {
                if star == idx.valency() {
                    let (full, parity) = idx.prepend(j);
                    f.accumulate(full.expect("j not in idx"), dc.signed(parity.sign()))?;
                    continue;
                }
                let (h, parity) = ih.prepend(j);
                let mut g = Form::zero(dim, star + 1);
                g.accumulate(h.expect("j not in idx"), dc.signed(parity.sign()))?;
                let theta = basis_like(c, dim, iv.clone(), 1);
                entries.push(ShadowEntry { g, theta, provenance });
            } else {
                let mut g = Form::zero(dim, star);
                g.accumulate(ih.clone(), dc)?;
                let (v, parity) = iv.prepend(j);
                let sign = if star % 2 == 0 { 1 } else { -1 };
                let theta = basis_like(c, dim, v.expect("j not in idx"), sign * parity.sign());
                entries.push(ShadowEntry { g, theta, provenance });
            }
        }
    }
    let purely_vertical = !xi.is_zero() && xi.terms().keys().all(|i| i.horizontal_prefix_len(n) == 0);
    if purely_vertical {
        log::warn!("decomposing a form with purely vertical indices; all shadows have degree 0 or 1");
    }
    Ok(ShadowData { ell, n, k: dim - n, f, entries, purely_vertical })
}

/// `f + Σ gᵢ∧ϑⁱ`.
pub fn shadow_reconstruct<C: Coefficient>(sd: &ShadowData<C>) -> Result<Form<C>> {
    sd.validate()?;
    let mut out = sd.f.clone();
    for e in &sd.entries {
        out = out.add(&e.g.wedge(&e.theta)?)?;
    }
    Ok(out)
}

/// Outcome of [`check_closedness`].
#[derive(Clone, Debug)]
pub struct ClosednessReport<C> {
    pub closed: bool,
    pub residual: Form<C>,
    /// Largest coefficient magnitude of the residual.
    pub residual_max: f64,
}

/// Computes `d̄(f + Σ g∧ϑ)`. Exact representations must give the zero form;
/// others must stay below `tol` in max norm.
pub fn check_closedness<C: Coefficient>(sd: &ShadowData<C>, tol: f64) -> Result<ClosednessReport<C>> {
    let residual = shadow_reconstruct(sd)?.exterior_derivative();
    let residual_max = residual.terms().values().map(|c| c.magnitude()).fold(0.0, f64::max);
    let closed = if C::EXACT { residual.is_zero() } else { residual_max < tol };
    Ok(ClosednessReport { closed, residual, residual_max })
}

/// The index set of the decomposition: every (source, ⋆, j) that can produce
/// an entry for some ξ of degree ℓ−1, in the order entries are emitted.
pub fn index_set(n: usize, k: usize, ell: usize) -> Vec<Provenance> {
    let dim = n + k;
    let mut out = Vec::new();
    if ell == 0 || ell > dim {
        return out;
    }
    for source in MultiIndex::all(dim, ell - 1) {
        let star = source.horizontal_prefix_len(n);
        for j in 0..dim {
            if source.contains(j) || (j < n && star == ell - 1) {
                continue;
            }
            out.push(Provenance { source: source.clone(), star, j });
        }
    }
    out
}

/// `(n+k) · Σ_{⋆=1}^{ℓ−2} C(n,⋆)·C(k,ℓ−⋆)`, which counts only part of the
/// index set (it vanishes for ℓ = 2). Reported for comparison; the
/// enforced bound is `index_set(n, k, ℓ).len()`.
pub fn summed_binomial_bound(n: usize, k: usize, ell: usize) -> usize {
    let s: usize = (1..ell.saturating_sub(1)).map(|star| binomial(n, star) * binomial(k, ell - star)).sum();
    (n + k) * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_polynomial;
    use crate::poly::Polynomial;

    fn p(s: &str, n: usize) -> Polynomial {
        parse_polynomial(s, n).unwrap()
    }

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex::from_one_based(v).unwrap()
    }

    fn form(dim: usize, deg: usize, terms: &[(&[usize], &str)]) -> Form<Polynomial> {
        Form::from_terms(dim, deg, terms.iter().map(|(i, c)| (idx(i), p(c, dim)))).unwrap()
    }

    #[test]
    fn fibre_coordinate_times_base_covector() {
        let xi = form(3, 1, &[(&[1], "x3")]);
        let sd = shadow_decompose(&xi, 2).unwrap();
        assert!(sd.f.is_zero());
        assert_eq!(sd.entries.len(), 1);
        let e = &sd.entries[0];
        assert_eq!(e.g, form(3, 1, &[(&[1], "1")]));
        assert_eq!(e.theta, form(3, 1, &[(&[3], "-1")]));
        assert_eq!(e.provenance, Some(Provenance { source: idx(&[1]), star: 1, j: 2 }));
        assert_eq!(shadow_reconstruct(&sd).unwrap(), xi.exterior_derivative());
        assert_eq!(shadow_reconstruct(&sd).unwrap(), form(3, 2, &[(&[1, 3], "-1")]));
    }

    #[test]
    fn horizontal_input_lands_in_f() {
        let xi = form(3, 1, &[(&[1], "x2^2"), (&[2], "x1*x2")]);
        let sd = shadow_decompose(&xi, 2).unwrap();
        assert!(sd.entries.is_empty());
        assert_eq!(sd.f, xi.exterior_derivative());
    }

    #[test]
    fn projection_examples() {
        let w = form(3, 2, &[(&[1, 2], "1")]);
        let t = horizontal_projection(&w, 2);
        assert_eq!(t.f, w);
        assert!(t.components.is_empty());

        let w = form(3, 2, &[(&[1, 3], "x1 + x3")]);
        let t = horizontal_projection(&w, 2);
        assert!(t.f.is_zero());
        assert_eq!(t.components.len(), 1);
        assert_eq!(t.components[0].star, 1);
        assert_eq!(t.components[0].g, form(3, 1, &[(&[1], "x1 + x3")]));
        assert_eq!(t.reconstruct(), w);
    }

    #[test]
    fn closedness_detects_fibre_dependence() {
        let sd = ShadowData {
            ell: 2,
            n: 2,
            k: 1,
            f: form(3, 2, &[(&[1, 2], "x3")]),
            entries: vec![],
            purely_vertical: false,
        };
        let r = check_closedness(&sd, 0.0).unwrap();
        assert!(!r.closed);
        assert_eq!(r.residual, form(3, 3, &[(&[1, 2, 3], "1")]));
    }

    #[test]
    fn single_entry_reconstruction() {
        let sd = ShadowData {
            ell: 2,
            n: 2,
            k: 1,
            f: Form::zero(3, 2),
            entries: vec![ShadowEntry { g: form(3, 1, &[(&[1], "1")]), theta: form(3, 1, &[(&[3], "1")]), provenance: None }],
            purely_vertical: false,
        };
        assert_eq!(shadow_reconstruct(&sd).unwrap(), form(3, 2, &[(&[1, 3], "1")]));
    }

    #[test]
    fn reconstruct_rejects_bad_degrees() {
        let sd = ShadowData {
            ell: 2,
            n: 2,
            k: 1,
            f: Form::zero(3, 2),
            entries: vec![ShadowEntry { g: form(3, 1, &[(&[1], "1")]), theta: form(3, 2, &[(&[2, 3], "1")]), provenance: None }],
            purely_vertical: false,
        };
        assert!(shadow_reconstruct(&sd).is_err());
    }

    #[test]
    fn purely_vertical_input_is_flagged_and_exact() {
        let xi = form(3, 1, &[(&[3], "x1*x3")]);
        let sd = shadow_decompose(&xi, 2).unwrap();
        assert!(sd.purely_vertical);
        assert_eq!(shadow_reconstruct(&sd).unwrap(), xi.exterior_derivative());
    }

    #[test]
    fn index_set_counts() {
        // (2,1,2): sources dx1, dx2, dx3; pairs (1,3),(2,3),(3,1),(3,2).
        assert_eq!(index_set(2, 1, 2).len(), 4);
        assert_eq!(summed_binomial_bound(2, 1, 2), 0);
        assert_eq!(summed_binomial_bound(3, 2, 3), 15);
        assert_eq!(index_set(3, 2, 3).len(), 10 * 3 - 3);
    }

    #[test]
    fn canonical_tuple_merges_by_index() {
        let xi = form(3, 1, &[(&[1], "x1*x3"), (&[3], "x1^2")]);
        let sd = shadow_decompose(&xi, 2).unwrap();
        let t = sd.canonical_tuple().unwrap();
        let direct = horizontal_projection(&xi.exterior_derivative(), 2);
        assert_eq!(t, direct);
    }

    #[test]
    fn boundary_samples_cover_faces() {
        let dom = StarDomain::centered(CoordBox::unit(2));
        let s = dom.boundary_samples(3);
        assert_eq!(s.len(), 4 * 3);
        for (x, nu) in &s {
            assert_eq!(dom.boundary_normal(x, 1e-12).unwrap(), *nu);
        }
    }

    #[test]
    fn serialization_round_trip() {
        let xi = form(4, 1, &[(&[2], "x4*x1"), (&[4], "x3")]);
        let sd = shadow_decompose(&xi, 3).unwrap();
        let s = serde_json::to_string(&sd).unwrap();
        assert!(s.contains("\"j\":4") || s.contains("\"j\":3"));
        let back: ShadowData<Polynomial> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, sd);
    }
}
