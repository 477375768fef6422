pub mod fastdelivery;
pub mod node;
pub mod overlay;
pub mod predicate;
pub mod scalar;
pub mod scoutsubs;
pub mod simnet;
pub mod wire;

mod bounded;

pub type Rational = num_rational::Ratio<i64>;

pub type ExactPredicate = predicate::Predicate<Rational>;
pub type ExactEvent = predicate::EventPredicate<Rational>;
pub type ExactNode = node::Node<Rational>;
pub type FloatPredicate = predicate::Predicate<f64>;
pub type FloatEvent = predicate::EventPredicate<f64>;
pub type FloatNode = node::Node<f64>;
