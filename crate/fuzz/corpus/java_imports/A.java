package x;
import java.util.List;
import static org.junit.Assert.*;
// import not.this;
class A {}
